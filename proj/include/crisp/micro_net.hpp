// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale testbed: a ReLU multi-layer perceptron trained with manual
// backpropagation on Gaussian-cluster data. Masks only act in the forward
// pass; gradients are dense (straight-through), so pruned weights keep
// learning and can come back when masks are re-chosen.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crisp/tensor.hpp"

namespace crisp {

enum class Activation : std::uint8_t { Identity = 0, ReLU = 1 };

struct Layer {
  DenseMatrix weights;  // S_l x K_l
  std::vector<double> bias;
  PruneMask mask;
  Activation activation = Activation::ReLU;
  bool prunable = true;

  DenseMatrix effective_weights() const { return apply_mask(weights, mask); }
};

struct MicroModel {
  std::vector<Layer> layers;
  std::uint32_t class_count = 0;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols(); }
  void check() const;  // throws DimensionError on inconsistent shapes

  friend bool operator==(const MicroModel&, const MicroModel&);
};

bool operator==(const Layer& a, const Layer& b);

// He-initialised MLP: hidden layers use ReLU and are prunable; the output
// layer is linear and stays dense.
MicroModel make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                    std::uint32_t classes, std::uint64_t seed);

struct SynthDataset {
  std::uint32_t classes = 0;
  std::uint32_t dim = 0;
  std::uint32_t per_class = 0;
  std::uint64_t seed = 0;
  double noise = 0.3;
  DenseMatrix means;  // classes x dim, unit rows
  DenseMatrix train_x;
  std::vector<std::uint32_t> train_y;
  DenseMatrix test_x;
  std::vector<std::uint32_t> test_y;

  friend bool operator==(const SynthDataset&, const SynthDataset&) = default;
};

// Unit-norm class means (pairwise angle at least min(60deg, 180deg/C)) with
// isotropic Gaussian noise scaled to the unit means: per-coordinate standard
// deviation noise / sqrt(d), so a sample's expected squared distance from its
// mean is noise^2. The first 80% of each class's samples go to the training
// split.
SynthDataset gen_synthetic(std::uint32_t classes, std::uint32_t dim, std::uint32_t per_class,
                           std::uint64_t seed, double noise = 0.3);

struct UserProfile {
  std::vector<std::uint32_t> u_c;  // ascending, distinct
  std::uint32_t h_per_class = 32;

  void validate(std::uint32_t classes) const;  // throws ArgumentError
  bool contains(std::uint32_t label) const;
};

struct ForwardCache {
  std::vector<DenseMatrix> inputs;       // input to layer l
  std::vector<DenseMatrix> preacts;      // x W^T + b before activation
  std::vector<DenseMatrix> eff_weights;  // W (.) M used in the pass
  DenseMatrix logits;
};

ForwardCache forward(const MicroModel& model, const DenseMatrix& batch);

struct Gradients {
  std::vector<DenseMatrix> weights;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const MicroModel& model);
  void add_scaled(const Gradients& other, double scale);
};

struct LossAndGrad {
  double loss = 0.0;  // mean softmax cross-entropy
  Gradients grads;    // gradients of the mean loss
};

LossAndGrad loss_and_backward(const MicroModel& model, const DenseMatrix& batch,
                              std::span<const std::uint32_t> labels);
double loss_only(const MicroModel& model, const DenseMatrix& batch,
                 std::span<const std::uint32_t> labels);

struct TrainOptions {
  std::uint32_t epochs = 10;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 4e-5;
  std::uint32_t batch = 32;
  std::uint64_t seed = 1;
};

// SGD with momentum and coupled weight decay (v = mu v + g + wd w; w -= lr v).
class SgdOptimizer {
 public:
  SgdOptimizer(const MicroModel& model, double lr, double momentum, double weight_decay);
  void step(MicroModel& model, const Gradients& grads);

 private:
  double lr_, momentum_, weight_decay_;
  Gradients velocity_;
};

struct EpochRecord {
  std::uint32_t epoch = 0;
  double mean_loss = 0.0;
};

// Shuffled minibatch SGD on dense weights; masks act in the forward pass only.
std::vector<EpochRecord> train(MicroModel& model, const DenseMatrix& x,
                               std::span<const std::uint32_t> y, const TrainOptions& opts);

struct LabeledSet {
  DenseMatrix x;
  std::vector<std::uint32_t> y;
};

LabeledSet select_classes(const DenseMatrix& x, std::span<const std::uint32_t> y,
                          std::span<const std::uint32_t> classes);
// First h_per_class training samples of every class in the profile.
LabeledSet saliency_samples(const SynthDataset& data, const UserProfile& profile);

struct ClassGradients {
  Gradients sum;  // summed per-sample loss gradients
  std::size_t samples = 0;
};

// Sum of loss gradients over the profile's saliency samples, weights unchanged.
ClassGradients accumulate_class_gradients(const MicroModel& model, const UserProfile& profile,
                                          const SynthDataset& data);

std::vector<std::uint32_t> predict(const MicroModel& model, const DenseMatrix& x,
                                   std::span<const std::uint32_t> restrict_to = {});

// Accuracy on test samples whose label is in u_c. Argmax runs over all
// classes unless restrict_logits is set; ties go to the lowest class id.
double evaluate(const MicroModel& model, const SynthDataset& data,
                std::span<const std::uint32_t> u_c, bool restrict_logits = false);

std::vector<std::uint8_t> serialize_model(const MicroModel& model);
MicroModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const std::string& path, const MicroModel& model);
MicroModel load_model(const std::string& path);

std::vector<std::uint8_t> serialize_dataset(const SynthDataset& data);
SynthDataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::string& path, const SynthDataset& data);
SynthDataset load_dataset(const std::string& path);

}  // namespace crisp
