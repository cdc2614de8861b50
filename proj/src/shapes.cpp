#include "xmar/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xmar/adam.hpp"
#include "xmar/ops.hpp"

namespace xmar {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double frac(double v) { return v - std::floor(v); }

// Point-in-triangle via signs of the edge functions.
bool inside_triangle(double px, double py, const double (&v)[3][2]) {
  auto edge = [&](int a, int b) {
    return (px - v[b][0]) * (v[a][1] - v[b][1]) - (v[a][0] - v[b][0]) * (py - v[b][1]);
  };
  const double d1 = edge(0, 1), d2 = edge(1, 2), d3 = edge(2, 0);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

}  // namespace

const char* shape_class_name(int label) {
  static const char* names[kShapeClassCount] = {"filled-circle",     "ring",          "rectangle",
                                                "cross",             "diagonal-stripe", "horizontal-stripe",
                                                "vertical-stripe",   "checkerboard",  "blob",
                                                "triangle"};
  if (label < 0 || label >= kShapeClassCount) throw Error("shape_class_name: label out of range");
  return names[label];
}

ShapeSample render_shape(const ShapesTask& task, std::uint64_t index) {
  if (task.num_classes < 1 || task.num_classes > kShapeClassCount) {
    throw ConfigError("shapes task: num_classes must be in [1, 10]");
  }
  const ImageSpec& im = task.image;
  ShapeSample s;
  s.label = static_cast<int>(index % static_cast<std::uint64_t>(task.num_classes));
  s.image = Tensor<float>(im.shape());
  std::mt19937_64 rng(splitmix64(task.seed ^ splitmix64(index)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  const double side = std::min(im.h, im.w);
  const double cx = uni(0.35, 0.65) * im.w;
  const double cy = uni(0.35, 0.65) * im.h;
  const double r = uni(0.18, 0.3) * side;
  const double thick = 0.3 * r;
  const double aspect_a = uni(0.55, 1.0) * r, aspect_b = uni(0.55, 1.0) * r;
  const double period = std::max(3.0, uni(0.3, 0.5) * r);
  const double phase = u01(rng);
  const double tri[3][2] = {{cx, cy - r}, {cx - r, cy + 0.75 * r}, {cx + r, cy + 0.75 * r}};
  std::vector<double> bg(im.c), fg(im.c);
  for (int ch = 0; ch < im.c; ++ch) {
    bg[ch] = uni(-1.0, -0.3);
    fg[ch] = uni(0.3, 1.0);
  }
  std::normal_distribution<double> noise(0.0, task.noise);

  auto mask = [&](double x, double y) -> double {
    const double dx = x - cx, dy = y - cy;
    const double d = std::hypot(dx, dy);
    const bool in_box = std::abs(dx) < r && std::abs(dy) < r;
    switch (s.label) {
      case 0: return d < r ? 1 : 0;
      case 1: return std::abs(d - r) < thick ? 1 : 0;
      case 2: return std::abs(dx) < aspect_a && std::abs(dy) < aspect_b ? 1 : 0;
      case 3: return (std::abs(dx) < thick && std::abs(dy) < r) || (std::abs(dy) < thick && std::abs(dx) < r) ? 1 : 0;
      case 4: return in_box && frac((x + y) / period + phase) < 0.5 ? 1 : 0;
      case 5: return in_box && frac(y / period + phase) < 0.5 ? 1 : 0;
      case 6: return in_box && frac(x / period + phase) < 0.5 ? 1 : 0;
      case 7: {
        const auto cell = static_cast<std::int64_t>(std::floor(x / period + phase)) +
                          static_cast<std::int64_t>(std::floor(y / period + phase));
        return in_box && (cell & 1) == 0 ? 1 : 0;
      }
      case 8: {
        const double sigma = 0.5 * r;
        return std::exp(-d * d / (2 * sigma * sigma));
      }
      case 9: return inside_triangle(x, y, tri) ? 1 : 0;
    }
    return 0;
  };

  auto data = s.image.data();
  for (int y = 0; y < im.h; ++y) {
    for (int x = 0; x < im.w; ++x) {
      const double m = mask(x + 0.5, y + 0.5);
      for (int ch = 0; ch < im.c; ++ch) {
        const double v = bg[ch] + m * (fg[ch] - bg[ch]) + noise(rng);
        data[(std::size_t(y) * im.w + x) * im.c + ch] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  }
  return s;
}

Tensor<float> render_batch(const ShapesTask& task, std::uint64_t first, std::int64_t count, std::vector<int>* labels) {
  Tensor<float> out(task.image.batch_shape(count));
  const auto per = static_cast<std::size_t>(task.image.pixels());
  if (labels) labels->clear();
  for (std::int64_t i = 0; i < count; ++i) {
    auto s = render_shape(task, first + static_cast<std::uint64_t>(i));
    std::copy(s.image.data().begin(), s.image.data().end(), out.data().begin() + i * per);
    if (labels) labels->push_back(s.label);
  }
  return out;
}

double shapes_accuracy(const VictimModel<float>& model, const ShapesTask& task, std::uint64_t first, int count) {
  if (count <= 0) return 0;
  constexpr int kChunk = 50;
  int correct = 0;
  for (int start = 0; start < count; start += kChunk) {
    const int n = std::min(kChunk, count - start);
    std::vector<int> labels;
    const auto images = render_batch(task, first + start, n, &labels);
    const auto logits = model.logits(images);
    const int k = model.num_labels;
    for (int b = 0; b < n; ++b) {
      const float* row = logits.data().data() + std::size_t(b) * k;
      const int pred = static_cast<int>(std::max_element(row, row + k) - row);
      correct += pred == labels[b];
    }
  }
  return static_cast<double>(correct) / count;
}

PretrainReport pretrain_victim(VictimModel<float>& model, const ShapesTask& task, const PretrainOptions& opt) {
  if (model.frozen) throw Error("pretrain_victim: model is frozen");
  if (task.image != model.image) throw ConfigError("pretrain_victim: task image spec differs from the victim's");
  if (task.num_classes > model.num_labels) throw ConfigError("pretrain_victim: task has more classes than the victim");
  if (opt.batch_size < 1 || opt.train_samples < 0 || opt.epochs < 0) throw ConfigError("pretrain_victim: bad options");

  PretrainReport report;
  std::vector<const Tensor<float>*> cparams;
  std::vector<Tensor<float>*> params;
  for (auto& [name, t] : model.weights) {
    params.push_back(&t);
    cparams.push_back(&t);
  }
  AdamState<float> adam(cparams);
  std::vector<std::uint64_t> order(static_cast<std::size_t>(opt.train_samples));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opt.seed);
  const auto per = static_cast<std::size_t>(task.image.pixels());

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const auto n = static_cast<std::int64_t>(std::min<std::size_t>(opt.batch_size, order.size() - start));
      Tensor<float> images(task.image.batch_shape(n));
      std::vector<int> labels;
      for (std::int64_t i = 0; i < n; ++i) {
        auto s = render_shape(task, order[start + i]);
        std::copy(s.image.data().begin(), s.image.data().end(), images.data().begin() + i * per);
        labels.push_back(s.label);
      }
      Tape<float> tape;
      auto w = model.bind(tape, true);
      auto loss = ops::cross_entropy<float>(model.forward(tape, w, tape.constant(std::move(images))), labels);
      tape.backward(loss);
      std::vector<const Tensor<float>*> grads;
      for (const auto& v : w) grads.push_back(&tape.grad(v));
      adam_step(params, grads, adam, opt.lr);
      loss_sum += loss.value().item();
      ++batches;
      ++report.steps;
    }
    report.epoch_loss.push_back(batches ? loss_sum / batches : 0.0);
  }
  report.holdout_accuracy = shapes_accuracy(model, task, kHoldoutOffset, opt.holdout_samples);
  model.frozen = true;
  return report;
}

}  // namespace xmar
