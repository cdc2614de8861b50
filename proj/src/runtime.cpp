#include "xmar/runtime.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>
#include <string>

namespace xmar::runtime {
namespace {

std::atomic<int> g_threads{0};
std::atomic<bool> g_deterministic{false};
std::atomic<bool> g_checked{false};

}  // namespace

void configure_from_env() {
  if (const char* v = std::getenv("XMAR_THREADS"); v != nullptr && *v != '\0') {
    int n = std::atoi(v);
    if (n > 0) set_threads(n);
  }
  if (const char* v = std::getenv("XMAR_DETERMINISTIC"); v != nullptr) {
    set_deterministic(std::string(v) == "1");
  }
}

int threads() {
  int n = g_threads.load();
  return n > 0 ? n : omp_get_max_threads();
}

void set_threads(int n) {
  g_threads.store(n);
  if (n > 0) omp_set_num_threads(n);
}

bool deterministic() { return g_deterministic.load(); }
void set_deterministic(bool on) { g_deterministic.store(on); }

bool checked() { return g_checked.load(); }
void set_checked(bool on) { g_checked.store(on); }

}  // namespace xmar::runtime
