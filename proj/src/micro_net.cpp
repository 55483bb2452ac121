// SPDX-License-Identifier: Apache-2.0
#include "crisp/micro_net.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "crisp/binary_io.hpp"

namespace crisp {

bool operator==(const Layer& a, const Layer& b) {
  return a.weights == b.weights && a.bias == b.bias && a.mask == b.mask &&
         a.activation == b.activation && a.prunable == b.prunable;
}

bool operator==(const MicroModel& a, const MicroModel& b) {
  return a.class_count == b.class_count && a.layers == b.layers;
}

void MicroModel::check() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    if (L.bias.size() != L.weights.rows()) {
      throw DimensionError("layer " + std::to_string(l) + ": bias length != output dim");
    }
    if (L.mask.rows() != L.weights.rows() || L.mask.cols() != L.weights.cols()) {
      throw DimensionError("layer " + std::to_string(l) + ": mask shape != weight shape");
    }
    if (l > 0 && L.weights.cols() != layers[l - 1].weights.rows()) {
      throw DimensionError("layer " + std::to_string(l) + ": input dim != previous output dim");
    }
  }
  if (layers.back().weights.rows() != class_count) {
    throw DimensionError("output layer width != class count");
  }
}

MicroModel make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                    std::uint32_t classes, std::uint64_t seed) {
  if (input_dim == 0 || classes < 2) throw ArgumentError("make_mlp: need input_dim >= 1, classes >= 2");
  std::mt19937_64 rng(seed);
  MicroModel model;
  model.class_count = classes;
  std::size_t in = input_dim;
  auto add = [&](std::size_t out, Activation act, bool prunable) {
    Layer L;
    L.weights = DenseMatrix(out, in);
    const double gain = act == Activation::ReLU ? 2.0 : 1.0;
    std::normal_distribution<double> init(0.0, std::sqrt(gain / static_cast<double>(in)));
    for (auto& v : L.weights.values()) v = init(rng);
    L.bias.assign(out, 0.0);
    L.mask = PruneMask(out, in, true);
    L.activation = act;
    L.prunable = prunable;
    model.layers.push_back(std::move(L));
    in = out;
  };
  for (auto h : hidden) {
    if (h == 0) throw ArgumentError("make_mlp: hidden width must be >= 1");
    add(h, Activation::ReLU, true);
  }
  add(classes, Activation::Identity, false);
  return model;
}

SynthDataset gen_synthetic(std::uint32_t classes, std::uint32_t dim, std::uint32_t per_class,
                           std::uint64_t seed, double noise) {
  if (classes < 2 || dim < 2) throw ArgumentError("gen_synthetic: need C >= 2 and d >= 2");
  if (per_class < 1) throw ArgumentError("gen_synthetic: need at least one sample per class");
  if (!(noise >= 0.0)) throw ArgumentError("gen_synthetic: noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SynthDataset data;
  data.classes = classes;
  data.dim = dim;
  data.per_class = per_class;
  data.seed = seed;
  data.noise = noise;
  data.means = DenseMatrix(classes, dim);

  const double min_angle = std::min(std::numbers::pi / 3.0, std::numbers::pi / classes);
  const double max_cos = std::cos(min_angle);
  for (std::uint32_t c = 0; c < classes; ++c) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100000) throw ArgumentError("gen_synthetic: cannot place separated means");
      auto mu = data.means.row(c);
      double norm = 0.0;
      for (auto& v : mu) {
        v = gauss(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : mu) v /= norm;
      bool separated = true;
      for (std::uint32_t p = 0; p < c && separated; ++p) {
        double cosang = 0.0;
        for (std::uint32_t j = 0; j < dim; ++j) cosang += mu[j] * data.means(p, j);
        separated = cosang <= max_cos;
      }
      if (separated) break;
    }
  }

  const double sigma = noise / std::sqrt(static_cast<double>(dim));
  const std::uint32_t n_train = per_class * 4 / 5;
  const std::uint32_t n_test = per_class - n_train;
  data.train_x = DenseMatrix(static_cast<std::size_t>(classes) * n_train, dim);
  data.test_x = DenseMatrix(static_cast<std::size_t>(classes) * n_test, dim);
  std::size_t tr = 0, te = 0;
  for (std::uint32_t c = 0; c < classes; ++c) {
    for (std::uint32_t i = 0; i < per_class; ++i) {
      const bool to_train = i < n_train;
      auto row = to_train ? data.train_x.row(tr++) : data.test_x.row(te++);
      for (std::uint32_t j = 0; j < dim; ++j) row[j] = data.means(c, j) + sigma * gauss(rng);
      (to_train ? data.train_y : data.test_y).push_back(c);
    }
  }
  return data;
}

void UserProfile::validate(std::uint32_t classes) const {
  if (u_c.empty()) throw ArgumentError("user profile: u_c is empty");
  for (std::size_t i = 0; i < u_c.size(); ++i) {
    if (u_c[i] >= classes) {
      throw ArgumentError("user profile: class " + std::to_string(u_c[i]) + " not in [0, " +
                          std::to_string(classes) + ")");
    }
    if (i > 0 && u_c[i] <= u_c[i - 1]) {
      throw ArgumentError("user profile: u_c must be ascending and distinct");
    }
  }
  if (h_per_class == 0) throw ArgumentError("user profile: h_per_class must be >= 1");
}

bool UserProfile::contains(std::uint32_t label) const {
  return std::binary_search(u_c.begin(), u_c.end(), label);
}

ForwardCache forward(const MicroModel& model, const DenseMatrix& batch) {
  model.check();
  if (batch.cols() != model.input_dim()) {
    throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                         " features, model expects " + std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  DenseMatrix x = batch;
  for (const auto& L : model.layers) {
    cache.eff_weights.push_back(L.effective_weights());
    DenseMatrix z = matmul_dense(x, cache.eff_weights.back());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto zr = z.row(i);
      for (std::size_t o = 0; o < zr.size(); ++o) zr[o] += L.bias[o];
    }
    DenseMatrix a = z;
    if (L.activation == Activation::ReLU) {
      for (auto& v : a.values()) v = v > 0.0 ? v : 0.0;
    }
    cache.inputs.push_back(std::move(x));
    cache.preacts.push_back(std::move(z));
    x = std::move(a);
  }
  cache.logits = std::move(x);
  return cache;
}

Gradients Gradients::zeros_like(const MicroModel& model) {
  Gradients g;
  for (const auto& L : model.layers) {
    g.weights.emplace_back(L.weights.rows(), L.weights.cols(), 0.0);
    g.bias.emplace_back(L.bias.size(), 0.0);
  }
  return g;
}

void Gradients::add_scaled(const Gradients& other, double scale) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    auto dst = weights[l].values();
    auto src = other.weights[l].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    for (std::size_t i = 0; i < bias[l].size(); ++i) bias[l][i] += scale * other.bias[l][i];
  }
}

namespace {

void check_labels(const MicroModel& model, const DenseMatrix& batch,
                  std::span<const std::uint32_t> labels) {
  if (labels.size() != batch.rows()) throw DimensionError("label count != batch size");
  if (batch.rows() == 0) throw ArgumentError("empty batch");
  for (auto y : labels) {
    if (y >= model.class_count) throw ArgumentError("label " + std::to_string(y) + " out of range");
  }
}

// Row-wise softmax in place; returns the mean cross-entropy.
double softmax_xent(DenseMatrix& logits, std::span<const std::uint32_t> labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (auto& v : z) {
      v = std::exp(v - zmax);
      denom += v;
    }
    for (auto& v : z) v /= denom;
    total += -std::log(z[labels[i]]);
  }
  const double loss = total / static_cast<double>(logits.rows());
  if (!std::isfinite(loss)) throw DivergenceError("loss became non-finite");
  return loss;
}

}  // namespace

double loss_only(const MicroModel& model, const DenseMatrix& batch,
                 std::span<const std::uint32_t> labels) {
  check_labels(model, batch, labels);
  auto cache = forward(model, batch);
  return softmax_xent(cache.logits, labels);
}

LossAndGrad loss_and_backward(const MicroModel& model, const DenseMatrix& batch,
                              std::span<const std::uint32_t> labels) {
  check_labels(model, batch, labels);
  auto cache = forward(model, batch);
  LossAndGrad out;
  DenseMatrix delta = cache.logits;
  out.loss = softmax_xent(delta, labels);
  const double inv_batch = 1.0 / static_cast<double>(batch.rows());
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    delta(i, labels[i]) -= 1.0;
    for (auto& v : delta.row(i)) v *= inv_batch;
  }

  out.grads.weights.resize(model.layers.size());
  out.grads.bias.resize(model.layers.size());
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    // Straight-through: dW is dense, the mask is not applied here.
    out.grads.weights[l] = matmul_dense(transpose(delta), transpose(cache.inputs[l]));
    auto& db = out.grads.bias[l];
    db.assign(delta.cols(), 0.0);
    for (std::size_t i = 0; i < delta.rows(); ++i)
      for (std::size_t o = 0; o < delta.cols(); ++o) db[o] += delta(i, o);
    if (l == 0) break;
    DenseMatrix dx = matmul_dense(delta, transpose(cache.eff_weights[l]));
    if (model.layers[l - 1].activation == Activation::ReLU) {
      auto pre = cache.preacts[l - 1].values();
      auto g = dx.values();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(pre[i] > 0.0)) g[i] = 0.0;
    }
    delta = std::move(dx);
  }
  return out;
}

SgdOptimizer::SgdOptimizer(const MicroModel& model, double lr, double momentum,
                           double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay),
      velocity_(Gradients::zeros_like(model)) {}

void SgdOptimizer::step(MicroModel& model, const Gradients& grads) {
  auto update = [&](std::span<double> w, std::span<const double> g, std::span<double> v) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i] + weight_decay_ * w[i];
      w[i] -= lr_ * v[i];
    }
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& L = model.layers[l];
    update(L.weights.values(), grads.weights[l].values(), velocity_.weights[l].values());
    update(L.bias, grads.bias[l], velocity_.bias[l]);
  }
}

namespace {

DenseMatrix gather_rows(const DenseMatrix& x, std::span<const std::size_t> idx) {
  DenseMatrix out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = x.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

std::vector<EpochRecord> train(MicroModel& model, const DenseMatrix& x,
                               std::span<const std::uint32_t> y, const TrainOptions& opts) {
  if (opts.epochs < 1) throw ArgumentError("train: epochs must be >= 1");
  if (opts.batch < 1) throw ArgumentError("train: batch must be >= 1");
  if (x.rows() != y.size() || x.rows() == 0) throw DimensionError("train: empty or mismatched data");
  std::mt19937_64 rng(opts.seed);
  SgdOptimizer sgd(model, opts.lr, opts.momentum, opts.weight_decay);
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochRecord> curve;
  std::vector<std::uint32_t> labels;
  for (std::uint32_t e = 0; e < opts.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::size_t end = std::min(order.size(), start + opts.batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = y[idx[i]];
      auto lg = loss_and_backward(model, gather_rows(x, idx), labels);
      loss_sum += lg.loss * static_cast<double>(idx.size());
      sgd.step(model, lg.grads);
    }
    curve.push_back({e + 1, loss_sum / static_cast<double>(order.size())});
  }
  return curve;
}

LabeledSet select_classes(const DenseMatrix& x, std::span<const std::uint32_t> y,
                          std::span<const std::uint32_t> classes) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (std::find(classes.begin(), classes.end(), y[i]) != classes.end()) idx.push_back(i);
  LabeledSet out{gather_rows(x, idx), {}};
  for (auto i : idx) out.y.push_back(y[i]);
  return out;
}

LabeledSet saliency_samples(const SynthDataset& data, const UserProfile& profile) {
  profile.validate(data.classes);
  std::vector<std::size_t> idx;
  for (auto c : profile.u_c) {
    std::size_t taken = 0;
    for (std::size_t i = 0; i < data.train_y.size() && taken < profile.h_per_class; ++i) {
      if (data.train_y[i] == c) {
        idx.push_back(i);
        ++taken;
      }
    }
    if (taken < profile.h_per_class) {
      throw ArgumentError("class " + std::to_string(c) + " has only " + std::to_string(taken) +
                          " training samples, need " + std::to_string(profile.h_per_class));
    }
  }
  LabeledSet out{gather_rows(data.train_x, idx), {}};
  for (auto i : idx) out.y.push_back(data.train_y[i]);
  return out;
}

ClassGradients accumulate_class_gradients(const MicroModel& model, const UserProfile& profile,
                                          const SynthDataset& data) {
  auto set = saliency_samples(data, profile);
  ClassGradients acc{Gradients::zeros_like(model), 0};
  const std::size_t h = profile.h_per_class;
  // One batch per class; mean gradients are rescaled back to sums.
  for (std::size_t start = 0; start < set.y.size(); start += h) {
    std::vector<std::size_t> idx(h);
    std::iota(idx.begin(), idx.end(), start);
    auto lg = loss_and_backward(model, gather_rows(set.x, idx),
                                std::span<const std::uint32_t>(set.y.data() + start, h));
    acc.sum.add_scaled(lg.grads, static_cast<double>(h));
    acc.samples += h;
  }
  return acc;
}

std::vector<std::uint32_t> predict(const MicroModel& model, const DenseMatrix& x,
                                   std::span<const std::uint32_t> restrict_to) {
  auto cache = forward(model, x);
  std::vector<std::uint32_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto z = cache.logits.row(i);
    std::uint32_t best = model.class_count;
    for (std::uint32_t c = 0; c < model.class_count; ++c) {
      if (!restrict_to.empty() &&
          std::find(restrict_to.begin(), restrict_to.end(), c) == restrict_to.end()) {
        continue;
      }
      if (best == model.class_count || z[c] > z[best]) best = c;
    }
    out[i] = best;
  }
  return out;
}

double evaluate(const MicroModel& model, const SynthDataset& data,
                std::span<const std::uint32_t> u_c, bool restrict_logits) {
  if (u_c.empty()) throw ArgumentError("evaluate: u_c is empty");
  auto set = select_classes(data.test_x, data.test_y, u_c);
  if (set.y.empty()) throw ArgumentError("evaluate: no test samples for the requested classes");
  auto pred = predict(model, set.x, restrict_logits ? u_c : std::span<const std::uint32_t>{});
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == set.y[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// ---- checkpoints ----
//
// model:   "CRSM" | u32 version=1 | u32 classes | u32 layer_count |
//          per layer: u32 rows | u32 cols | u8 activation | u8 prunable |
//                     f64 weights[] | f64 bias[] | u8 mask[]
// dataset: "CRSD" | u32 version=1 | u32 classes | u32 dim | u32 per_class |
//          u64 seed | f64 noise | f64 means[] | u32 n_train | f64 x[] | u32 y[] |
//          u32 n_test | f64 x[] | u32 y[]

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;

void put_matrix(io::ByteWriter& out, const DenseMatrix& m) {
  for (auto v : m.values()) out.f64(v);
}

DenseMatrix get_matrix(io::ByteReader& in, std::size_t rows, std::size_t cols) {
  in.need_elements(static_cast<std::uint64_t>(rows) * cols, 8);
  DenseMatrix m(rows, cols);
  for (auto& v : m.values()) v = in.f64();
  return m;
}
}  // namespace

std::vector<std::uint8_t> serialize_model(const MicroModel& model) {
  model.check();
  io::ByteWriter out;
  out.magic("CRSM");
  out.u32(kCheckpointVersion);
  out.u32(model.class_count);
  out.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& L : model.layers) {
    out.u32(static_cast<std::uint32_t>(L.weights.rows()));
    out.u32(static_cast<std::uint32_t>(L.weights.cols()));
    out.u8(static_cast<std::uint8_t>(L.activation));
    out.u8(L.prunable ? 1 : 0);
    put_matrix(out, L.weights);
    for (auto v : L.bias) out.f64(v);
    for (auto bit : L.mask.bits()) out.u8(bit);
  }
  return out.take();
}

MicroModel deserialize_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes, "model");
  in.expect_magic("CRSM");
  in.expect_version(kCheckpointVersion);
  MicroModel model;
  model.class_count = in.u32();
  const auto n_layers = in.u32();
  in.need_elements(n_layers, 10);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    Layer L;
    const std::size_t rows = in.u32();
    const std::size_t cols = in.u32();
    const auto act = in.u8();
    if (act > 1) throw FormatError("model: unknown activation code " + std::to_string(act));
    L.activation = static_cast<Activation>(act);
    const auto prunable = in.u8();
    if (prunable > 1) throw FormatError("model: bad prunable flag");
    L.prunable = prunable == 1;
    L.weights = get_matrix(in, rows, cols);
    in.need_elements(rows, 8);
    L.bias.resize(rows);
    for (auto& v : L.bias) v = in.f64();
    in.need_elements(static_cast<std::uint64_t>(rows) * cols, 1);
    L.mask = PruneMask(rows, cols, false);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const auto bit = in.u8();
        if (bit > 1) throw FormatError("model: mask byte is not 0/1");
        L.mask.set(r, c, bit == 1);
      }
    }
    model.layers.push_back(std::move(L));
  }
  in.expect_end();
  try {
    model.check();
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  return model;
}

void save_model(const std::string& path, const MicroModel& model) {
  io::write_file(path, serialize_model(model));
}

MicroModel load_model(const std::string& path) { return deserialize_model(io::read_file(path)); }

std::vector<std::uint8_t> serialize_dataset(const SynthDataset& data) {
  io::ByteWriter out;
  out.magic("CRSD");
  out.u32(kCheckpointVersion);
  out.u32(data.classes);
  out.u32(data.dim);
  out.u32(data.per_class);
  out.u64(data.seed);
  out.f64(data.noise);
  put_matrix(out, data.means);
  out.u32(static_cast<std::uint32_t>(data.train_y.size()));
  put_matrix(out, data.train_x);
  for (auto y : data.train_y) out.u32(y);
  out.u32(static_cast<std::uint32_t>(data.test_y.size()));
  put_matrix(out, data.test_x);
  for (auto y : data.test_y) out.u32(y);
  return out.take();
}

SynthDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes, "dataset");
  in.expect_magic("CRSD");
  in.expect_version(kCheckpointVersion);
  SynthDataset data;
  data.classes = in.u32();
  data.dim = in.u32();
  data.per_class = in.u32();
  data.seed = in.u64();
  data.noise = in.f64();
  data.means = get_matrix(in, data.classes, data.dim);
  auto labels = [&](std::size_t n) {
    in.need_elements(n, 4);
    std::vector<std::uint32_t> y(n);
    for (auto& v : y) {
      v = in.u32();
      if (v >= data.classes) throw FormatError("dataset: label out of range");
    }
    return y;
  };
  const std::size_t n_train = in.u32();
  data.train_x = get_matrix(in, n_train, data.dim);
  data.train_y = labels(n_train);
  const std::size_t n_test = in.u32();
  data.test_x = get_matrix(in, n_test, data.dim);
  data.test_y = labels(n_test);
  in.expect_end();
  return data;
}

void save_dataset(const std::string& path, const SynthDataset& data) {
  io::write_file(path, serialize_dataset(data));
}

SynthDataset load_dataset(const std::string& path) {
  return deserialize_dataset(io::read_file(path));
}

}  // namespace crisp
