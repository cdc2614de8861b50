#pragma once

namespace xmar::runtime {

// Process-wide knobs. configure_from_env() reads XMAR_THREADS (caps the
// OpenMP team size) and XMAR_DETERMINISTIC (forces fixed-order reductions).
void configure_from_env();

int threads();
void set_threads(int n);

bool deterministic();
void set_deterministic(bool on);

// Checked mode: ops verify their outputs are finite and the victim verifies
// pixel ranges. Off by default; test suites switch it on.
bool checked();
void set_checked(bool on);

}  // namespace xmar::runtime
