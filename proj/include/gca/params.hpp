#pragma once

#include <string>
#include <vector>

#include "gca/nn.hpp"
#include "gca/rng.hpp"
#include "gca/tensor.hpp"

namespace gca {

// What a registered tensor is, which decides initialization, trainability,
// and weight-decay exemption.
enum class ParamKind { ConvWeight, Bias, BnGamma, BnBeta, BnMean, BnVar };

inline bool param_trainable(ParamKind k) {
  return k != ParamKind::BnMean && k != ParamKind::BnVar;
}

// Only conv weights get decayed; biases and BN affine terms are exempt.
inline bool param_decay_exempt(ParamKind k) { return k != ParamKind::ConvWeight; }

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor4<T>* tensor;
  ParamKind kind;
};

// Flat, ordered view over every tensor a model owns. Registration order is
// the initialization order and the checkpoint order, so it must be stable.
template <typename T>
class ParamRegistry {
 public:
  void add(std::string name, Tensor4<T>& t, ParamKind kind) {
    for (const auto& e : entries_)
      if (e.name == name) fail("ParamRegistry: duplicate parameter name ", name);
    entries_.push_back(ParamEntry<T>{std::move(name), &t, kind});
  }

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }

  Tensor4<T>& find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return *e.tensor;
    fail("ParamRegistry: no parameter named ", name);
  }

  Index total_count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.tensor->numel();
    return n;
  }

  Index trainable_count() const {
    Index n = 0;
    for (const auto& e : entries_)
      if (param_trainable(e.kind)) n += e.tensor->numel();
    return n;
  }

  // Sum of sizes over entries whose name contains the given fragment.
  Index count_matching(const std::string& fragment) const {
    Index n = 0;
    for (const auto& e : entries_)
      if (e.name.find(fragment) != std::string::npos) n += e.tensor->numel();
    return n;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
};

// One batchnorm layer's tensors, all shaped (1,C,1,1).
template <typename T>
struct BnParams {
  Tensor4<T> gamma, beta, running_mean, running_var;
  BnParams() : BnParams(1) {}
  explicit BnParams(Index C)
      : gamma({1, C, 1, 1}),
        beta({1, C, 1, 1}),
        running_mean({1, C, 1, 1}),
        running_var({1, C, 1, 1}) {}
};

template <typename T>
void register_bn(ParamRegistry<T>& reg, const std::string& prefix, BnParams<T>& bn) {
  reg.add(prefix + ".gamma", bn.gamma, ParamKind::BnGamma);
  reg.add(prefix + ".beta", bn.beta, ParamKind::BnBeta);
  reg.add(prefix + ".running_mean", bn.running_mean, ParamKind::BnMean);
  reg.add(prefix + ".running_var", bn.running_var, ParamKind::BnVar);
}

template <typename T>
Tensor4<T> bn_apply(const Tensor4<T>& x, BnParams<T>& bn, Mode mode, bool update_stats, T eps,
                    T momentum, Tape<T>* tape = nullptr) {
  return batchnorm2d(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, mode, update_stats,
                     eps, momentum, tape);
}

// Running totals; BN channels contribute four to total but two to trainable.
struct ParamCount {
  Index total = 0;
  Index trainable = 0;
};

// Deterministic init: every parameter gets its own derived stream keyed by
// registration index, so adding a parameter elsewhere never reshuffles the
// values of existing ones within a fixed architecture.
template <typename T>
void init_params(ParamRegistry<T>& reg, std::uint64_t seed) {
  std::uint64_t idx = 0;
  for (const auto& e : reg.entries()) {
    Rng rng = Rng::derive(seed, rng_stream::kInit, idx++);
    switch (e.kind) {
      case ParamKind::ConvWeight: {
        const Shape4& s = e.tensor->shape;
        kaiming_uniform(*e.tensor, s.c * s.h * s.w, rng);
        break;
      }
      case ParamKind::Bias:
      case ParamKind::BnBeta:
      case ParamKind::BnMean:
        for (auto& v : e.tensor->data) v = T(0);
        break;
      case ParamKind::BnGamma:
      case ParamKind::BnVar:
        for (auto& v : e.tensor->data) v = T(1);
        break;
    }
  }
}

}  // namespace gca
