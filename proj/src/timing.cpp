#include "xmar/timing.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "xmar/ops.hpp"
#include "xmar/program.hpp"

namespace xmar {

void TimingOptions::validate() const {
  if (lengths.empty()) throw ConfigError("timing: no lengths");
  for (auto n : lengths)
    if (n < 1) throw ConfigError("timing: lengths must be positive");
  if (repeats < 1 || inner < 1 || batch < 1) throw ConfigError("timing: repeats, inner and batch must be positive");
  if (patch < 1 || (channels != 1 && channels != 3)) throw ConfigError("timing: bad patch size or channel count");
  if (vocab < 2) throw ConfigError("timing: vocab must hold at least 2 tokens");
}

nlohmann::json TimingOptions::to_json() const {
  return {{"lengths", lengths}, {"repeats", repeats}, {"inner", inner},       {"batch", batch},
          {"patch", patch},     {"channels", channels}, {"vocab", vocab}, {"seed", seed},
          {"backward", backward}};
}

ImageSpec timing_image(std::int64_t tokens, int patch, int channels) {
  const std::int64_t cols = std::gcd(tokens, std::int64_t{32});
  return {static_cast<int>(tokens / cols * patch), static_cast<int>(cols * patch), channels};
}

nlohmann::json TimingReport::to_json() const {
  nlohmann::json pts = nlohmann::json::array(), rs = nlohmann::json::array();
  for (const auto& p : points) {
    pts.push_back({{"tokens", p.tokens},
                   {"image", {p.image.h, p.image.w, p.image.c}},
                   {"median_s", p.median_s},
                   {"min_s", p.min_s}});
  }
  for (const auto& r : ratios) rs.push_back({{"n", r.n}, {"two_n", 2 * r.n}, {"ratio", r.ratio}});
  return {{"points", pts}, {"ratios", rs}};
}

TimingReport measure_embed_timing(const TimingOptions& options) {
  options.validate();
  using clock = std::chrono::steady_clock;
  TimingReport report;
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> tok(0, options.vocab - 1);
  for (auto n : options.lengths) {
    const ImageSpec image = timing_image(n, options.patch, options.channels);
    const auto program = make_program<float>(options.vocab, image, options.patch, 0, options.seed, 0.5);
    std::vector<TokenSequence> batch(static_cast<std::size_t>(options.batch), TokenSequence(n));
    for (auto& seq : batch)
      for (auto& t : seq) t = tok(rng);
    auto once = [&] {
      Tape<float> tape;
      auto theta = tape.leaf(program.theta, options.backward);
      auto loss = ops::sum(embed(program, theta, std::span<const TokenSequence>(batch)));
      if (options.backward) tape.backward(loss);
    };
    once();  // warm-up
    std::vector<double> samples;
    for (int r = 0; r < options.repeats; ++r) {
      const auto t0 = clock::now();
      for (int i = 0; i < options.inner; ++i) once();
      samples.push_back(std::chrono::duration<double>(clock::now() - t0).count() / options.inner);
    }
    std::sort(samples.begin(), samples.end());
    report.points.push_back({n, image, samples[samples.size() / 2], samples.front()});
  }
  for (const auto& a : report.points) {
    for (const auto& b : report.points) {
      if (b.tokens == 2 * a.tokens) report.ratios.push_back({a.tokens, b.median_s / a.median_s});
    }
  }
  return report;
}

}  // namespace xmar
