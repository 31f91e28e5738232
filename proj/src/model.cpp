#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

// In-place softmax; returns log-sum-exp of the input logits.
double softmax(std::span<double> z) {
  double max = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp(v - max);
    sum += v;
  }
  for (auto& v : z) v /= sum;
  return max + std::log(sum);
}

void check_sample(const Sample& s, std::size_t dim, std::size_t classes) {
  if (s.features.size() != dim) throw Error(ErrorCode::kShapeMismatch, "sample feature length mismatch");
  if (s.label >= classes) throw Error(ErrorCode::kInvalidArgument, "sample label out of range");
}

void glorot_fill(std::span<float> w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  float a = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  std::uniform_real_distribution<float> dist(-a, a);
  for (auto& v : w) v = dist(rng);
}

// Weights W [classes, dim] row-major, then bias b [classes].
class LogReg final : public Model {
 public:
  LogReg(std::size_t dim, std::size_t classes) : dim_(dim), classes_(classes) {}

  std::string name() const override { return "logreg"; }
  std::size_t feature_dim() const override { return dim_; }
  std::size_t num_classes() const override { return classes_; }

  Layout layout() const override {
    return {{"W", {static_cast<std::uint32_t>(classes_), static_cast<std::uint32_t>(dim_)}},
            {"b", {static_cast<std::uint32_t>(classes_)}}};
  }

  ParamVector init_params(std::uint64_t seed) const override {
    auto pv = ParamVector::zeros(layout());
    auto rng = make_rng(seed, {hash_string("init")});
    glorot_fill(pv.values().subspan(0, classes_ * dim_), dim_, classes_, rng);
    return pv;
  }

  void predict(std::span<const float> p, const Sample& s, std::span<double> probs) const override {
    check_sample(s, dim_, classes_);
    logits(p, s, probs);
    softmax(probs);
  }

  double loss_and_gradient(std::span<const float> p, std::span<const Sample* const> batch,
                           std::span<double> grad) const override {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<double> z(classes_);
    double total = 0.0;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const Sample* s : batch) {
      check_sample(*s, dim_, classes_);
      logits(p, *s, z);
      double lse_z = z[s->label];
      double lse = softmax(z);
      total += lse - lse_z;
      z[s->label] -= 1.0;
      for (std::size_t c = 0; c < classes_; ++c) {
        double d = z[c] * scale;
        double* gw = grad.data() + c * dim_;
        for (std::size_t k = 0; k < dim_; ++k) gw[k] += d * s->features[k];
        grad[classes_ * dim_ + c] += d;
      }
    }
    return total * scale;
  }

 private:
  void logits(std::span<const float> p, const Sample& s, std::span<double> z) const {
    const float* bias = p.data() + classes_ * dim_;
    for (std::size_t c = 0; c < classes_; ++c) {
      const float* w = p.data() + c * dim_;
      double acc = bias[c];
      for (std::size_t k = 0; k < dim_; ++k) acc += static_cast<double>(w[k]) * s.features[k];
      z[c] = acc;
    }
  }

  std::size_t dim_;
  std::size_t classes_;
};

// One tanh hidden layer: W1 [hidden, dim], b1 [hidden], W2 [classes, hidden], b2 [classes].
class Mlp final : public Model {
 public:
  Mlp(std::size_t dim, std::size_t hidden, std::size_t classes) : dim_(dim), hidden_(hidden), classes_(classes) {}

  std::string name() const override { return "mlp"; }
  std::size_t feature_dim() const override { return dim_; }
  std::size_t num_classes() const override { return classes_; }

  Layout layout() const override {
    auto d = static_cast<std::uint32_t>(dim_);
    auto h = static_cast<std::uint32_t>(hidden_);
    auto c = static_cast<std::uint32_t>(classes_);
    return {{"W1", {h, d}}, {"b1", {h}}, {"W2", {c, h}}, {"b2", {c}}};
  }

  ParamVector init_params(std::uint64_t seed) const override {
    auto pv = ParamVector::zeros(layout());
    auto rng = make_rng(seed, {hash_string("init")});
    auto v = pv.values();
    glorot_fill(v.subspan(off_w1(), hidden_ * dim_), dim_, hidden_, rng);
    glorot_fill(v.subspan(off_w2(), classes_ * hidden_), hidden_, classes_, rng);
    return pv;
  }

  void predict(std::span<const float> p, const Sample& s, std::span<double> probs) const override {
    check_sample(s, dim_, classes_);
    std::vector<double> h(hidden_);
    forward(p, s, h, probs);
    softmax(probs);
  }

  double loss_and_gradient(std::span<const float> p, std::span<const Sample* const> batch,
                           std::span<double> grad) const override {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<double> h(hidden_), z(classes_), dh(hidden_);
    double total = 0.0;
    const double scale = 1.0 / static_cast<double>(batch.size());
    const float* w2 = p.data() + off_w2();
    for (const Sample* s : batch) {
      check_sample(*s, dim_, classes_);
      forward(p, *s, h, z);
      double z_label = z[s->label];
      double lse = softmax(z);
      total += lse - z_label;
      z[s->label] -= 1.0;

      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t c = 0; c < classes_; ++c) {
        double d = z[c] * scale;
        double* g = grad.data() + off_w2() + c * hidden_;
        for (std::size_t j = 0; j < hidden_; ++j) {
          g[j] += d * h[j];
          dh[j] += d * w2[c * hidden_ + j];
        }
        grad[off_b2() + c] += d;
      }
      for (std::size_t j = 0; j < hidden_; ++j) {
        double dz = dh[j] * (1.0 - h[j] * h[j]);
        double* g = grad.data() + off_w1() + j * dim_;
        for (std::size_t k = 0; k < dim_; ++k) g[k] += dz * s->features[k];
        grad[off_b1() + j] += dz;
      }
    }
    return total * scale;
  }

 private:
  std::size_t off_w1() const { return 0; }
  std::size_t off_b1() const { return hidden_ * dim_; }
  std::size_t off_w2() const { return off_b1() + hidden_; }
  std::size_t off_b2() const { return off_w2() + classes_ * hidden_; }

  void forward(std::span<const float> p, const Sample& s, std::span<double> h, std::span<double> z) const {
    for (std::size_t j = 0; j < hidden_; ++j) {
      const float* w = p.data() + off_w1() + j * dim_;
      double acc = p[off_b1() + j];
      for (std::size_t k = 0; k < dim_; ++k) acc += static_cast<double>(w[k]) * s.features[k];
      h[j] = std::tanh(acc);
    }
    for (std::size_t c = 0; c < classes_; ++c) {
      const float* w = p.data() + off_w2() + c * hidden_;
      double acc = p[off_b2() + c];
      for (std::size_t j = 0; j < hidden_; ++j) acc += static_cast<double>(w[j]) * h[j];
      z[c] = acc;
    }
  }

  std::size_t dim_;
  std::size_t hidden_;
  std::size_t classes_;
};

void check_params(const Model& model, const ParamVector& params) {
  if (params.layout() != model.layout()) {
    throw Error(ErrorCode::kLayoutMismatch, "parameters do not match model '" + model.name() + "'");
  }
}

}  // namespace

void ModelSpec::validate() const {
  if (feature_dim == 0) throw Error(ErrorCode::kInvalidConfig, "feature_dim must be positive");
  if (num_classes < 2) throw Error(ErrorCode::kInvalidConfig, "num_classes must be at least 2");
  if (kind == ModelKind::kMlp && hidden_dim == 0) throw Error(ErrorCode::kInvalidConfig, "hidden_dim must be >= 1");
}

std::unique_ptr<Model> make_model(const ModelSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case ModelKind::kLogReg: return std::make_unique<LogReg>(spec.feature_dim, spec.num_classes);
    case ModelKind::kMlp: return std::make_unique<Mlp>(spec.feature_dim, spec.hidden_dim, spec.num_classes);
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown model kind");
}

double batch_loss(const Model& model, std::span<const float> params, std::span<const Sample* const> batch) {
  std::vector<double> probs(model.num_classes());
  double total = 0.0;
  for (const Sample* s : batch) {
    model.predict(params, *s, probs);
    total += -std::log(std::max(probs[s->label], 1e-300));
  }
  return total / static_cast<double>(batch.size());
}

TrainResult train_local(const Model& model, const ParamVector& params, std::span<const Sample> shard,
                        const TrainOptions& options) {
  check_params(model, params);
  if (shard.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot train on an empty shard");
  if (options.epochs == 0 || options.batch_size == 0) {
    throw Error(ErrorCode::kInvalidArgument, "epochs and batch_size must be positive");
  }

  ParamVector w = params;
  auto values = w.values();
  std::vector<float> velocity(values.size(), 0.0f);
  std::vector<double> grad(values.size());
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const Sample*> batch;
  batch.reserve(options.batch_size);

  auto rng = make_rng(options.seed, {hash_string("shuffle")});
  const float lr = static_cast<float>(options.learning_rate);
  const float mu = static_cast<float>(options.momentum);
  double epoch_loss = 0.0;

  for (std::uint32_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      std::size_t end = std::min(order.size(), start + options.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&shard[order[i]]);

      double loss = model.loss_and_gradient(values, batch, grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kTrainingDiverged, "non-finite loss in epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < values.size(); ++i) {
        velocity[i] = mu * velocity[i] + static_cast<float>(grad[i]);
        values[i] -= lr * velocity[i];
      }
    }
    epoch_loss = loss_sum / static_cast<double>(shard.size());
  }
  return {std::move(w), epoch_loss, static_cast<std::uint32_t>(shard.size())};
}

Evaluation evaluate(const Model& model, const ParamVector& params, std::span<const Sample> samples) {
  check_params(model, params);
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot evaluate on an empty sample set");
  std::vector<double> probs(model.num_classes());
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    model.predict(params.values(), s, probs);
    loss += -std::log(std::max(probs[s.label], 1e-300));
    auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    if (best == s.label) ++correct;
  }
  auto n = static_cast<double>(samples.size());
  return {loss / n, static_cast<double>(correct) / n, samples.size()};
}

}  // namespace fedsim
