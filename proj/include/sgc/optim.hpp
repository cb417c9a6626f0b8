#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgc/core/rng.hpp"
#include "sgc/core/types.hpp"

namespace sgc {

// Named view over the trainable parameters of one network, with one owned
// gradient buffer per parameter. Entries keep registration order, which also
// fixes serialization and update order.
template <typename S>
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Mat<S>* value;
    Mat<S> grad;
    bool decay;
  };

  void add(const std::string& name, Mat<S>& value, bool decay) {
    index_[&value] = entries_.size();
    entries_.push_back({name, &value, Mat<S>::Zero(value.rows(), value.cols()), decay});
  }

  Mat<S>* grad_sink(const Mat<S>& value) {
    auto it = index_.find(&value);
    check(it != index_.end(), "ParamRegistry: unregistered parameter");
    return &entries_[it->second].grad;
  }

  bool contains(const Mat<S>& value) const { return index_.count(&value) > 0; }

  void zero_grads() {
    for (auto& e : entries_) e.grad.setZero();
  }

  std::size_t size() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  long scalar_count() const {
    long n = 0;
    for (const auto& e : entries_) n += long(e.value->size());
    return n;
  }

  std::uint64_t values_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : entries_) {
      h = fnv1a64(e.name.data(), e.name.size(), h);
      h = fnv1a64(e.value->data(), sizeof(S) * std::size_t(e.value->size()), h);
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<const Mat<S>*, std::size_t> index_;
};

// Adam with decoupled weight decay. Decay is applied only to entries
// registered with decay=true (weight matrices; biases and norm gains are
// exempt, matching the training recipe this follows).
template <typename S>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.04;

  void init(const ParamRegistry<S>& reg) {
    m_.clear();
    v_.clear();
    for (const auto& e : reg.entries()) {
      m_.push_back(Mat<S>::Zero(e.value->rows(), e.value->cols()));
      v_.push_back(Mat<S>::Zero(e.value->rows(), e.value->cols()));
    }
    t_ = 0;
  }

  void step(ParamRegistry<S>& reg, double lr) {
    check(m_.size() == reg.size(), "AdamW: registry changed since init");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (std::size_t i = 0; i < reg.size(); ++i) {
      auto& e = reg.entries()[i];
      const Mat<S>& g = e.grad;
      m_[i] = S(beta1) * m_[i] + S(1 - beta1) * g;
      v_[i] = S(beta2) * v_[i] + S(1 - beta2) * g.cwiseProduct(g);
      Mat<S> update =
          (m_[i] / S(bc1)).cwiseQuotient(((v_[i] / S(bc2)).cwiseSqrt().array() + S(eps)).matrix());
      if (e.decay && weight_decay > 0) update += S(weight_decay) * (*e.value);
      *e.value -= S(lr) * update;
    }
  }

  long steps_taken() const { return t_; }
  std::vector<Mat<S>>& first_moments() { return m_; }
  std::vector<Mat<S>>& second_moments() { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  std::vector<Mat<S>> m_, v_;
  long t_ = 0;
};

}  // namespace sgc
