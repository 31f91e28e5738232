#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>

#include "fedsim/param_vector.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

enum class ModelKind { kLogReg, kMlp };

struct ModelSpec {
  ModelKind kind = ModelKind::kLogReg;
  std::size_t feature_dim = 2;
  std::size_t num_classes = 2;
  std::size_t hidden_dim = 16;  // mlp only

  void validate() const;
};

// A differentiable classifier over flat parameter vectors. Implementations
// are stateless; every method is safe to call concurrently.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string name() const = 0;
  virtual Layout layout() const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual std::size_t num_classes() const = 0;

  virtual ParamVector init_params(std::uint64_t seed) const = 0;

  // Softmax class probabilities for one sample.
  virtual void predict(std::span<const float> params, const Sample& sample, std::span<double> probs) const = 0;

  // Mean cross-entropy over the batch; writes the gradient of that mean
  // into `grad` (overwritten, same length as params). Accumulation runs in
  // batch order so results are reproducible bit for bit.
  virtual double loss_and_gradient(std::span<const float> params, std::span<const Sample* const> batch,
                                   std::span<double> grad) const = 0;
};

using ModelFactory = std::function<std::unique_ptr<Model>(std::size_t feature_dim, std::size_t num_classes)>;

std::unique_ptr<Model> make_model(const ModelSpec& spec);

// Mean cross-entropy of the batch only (no gradient).
double batch_loss(const Model& model, std::span<const float> params, std::span<const Sample* const> batch);

struct TrainOptions {
  std::uint32_t epochs = 1;
  std::uint32_t batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ParamVector params;
  double loss = 0.0;  // mean loss over the final epoch
  std::uint32_t num_samples = 0;
};

// E epochs of mini-batch SGD with momentum (v = mu*v + g; w -= lr*v) over a
// seeded shuffle of the shard. The trailing partial batch is kept.
// Throws kTrainingDiverged on a non-finite loss.
TrainResult train_local(const Model& model, const ParamVector& params, std::span<const Sample> shard,
                        const TrainOptions& options);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t num_samples = 0;
};

Evaluation evaluate(const Model& model, const ParamVector& params, std::span<const Sample> samples);

}  // namespace fedsim
