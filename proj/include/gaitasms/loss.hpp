#pragma once

// Batch-all triplet loss per strip, per-strip softmax cross-entropy, and their sum.

#include "gaitasms/ops.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace gaitasms {

enum class TripletReduction { MeanNonZero, MeanAll };

struct TripletConfig {
  double margin = 0.2;
  TripletReduction reduction = TripletReduction::MeanNonZero;
};

namespace detail {
inline void check_triplet_labels(const std::vector<int>& labels) {
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw std::invalid_argument("triplet_batch_all: need at least two classes in the batch");
  for (const auto& [label, count] : counts)
    if (count < 2)
      throw std::invalid_argument("triplet_batch_all: class " + std::to_string(label) +
                                  " has a single sample; the P x K sampler guarantees at least two");
}
}  // namespace detail

/// Enumerates every (anchor, positive, negative) triple inside each strip,
/// applies max(d_ap - d_an + margin, 0) on Euclidean distances, reduces per
/// `cfg.reduction`, then averages over strips. embeddings: N x strips x D.
template <typename Scalar>
Var<Scalar> triplet_batch_all(const Var<Scalar>& embeddings, const std::vector<int>& labels, const TripletConfig& cfg) {
  const Shape& s = embeddings.shape();
  if (s.size() != 3) throw ShapeError("triplet_batch_all: expected N x strips x D, got " + shape_string(s));
  const Index n = s[0], strips = s[1], dim = s[2];
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("triplet_batch_all: one label per sample required");
  if (!std::isfinite(cfg.margin) || cfg.margin < 0) throw ConfigError("triplet_batch_all: margin must be finite and >= 0");
  detail::check_triplet_labels(labels);

  const Scalar* e = embeddings.value().data();
  auto at = [&](Index i, Index h, Index k) { return static_cast<double>(e[(i * strips + h) * dim + k]); };
  // coef[h][i * n + j] is d loss / d dist_h(i, j) up to the upstream gradient.
  auto coef = std::make_shared<std::vector<double>>(static_cast<std::size_t>(strips * n * n), 0.0);
  auto dist = std::make_shared<std::vector<double>>(static_cast<std::size_t>(strips * n * n), 0.0);
  double total_loss = 0;
  for (Index h = 0; h < strips; ++h) {
    double* d = dist->data() + h * n * n;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) {
        double acc = 0;
        for (Index k = 0; k < dim; ++k) {
          const double diff = at(i, h, k) - at(j, h, k);
          acc += diff * diff;
        }
        d[i * n + j] = d[j * n + i] = std::sqrt(acc);
      }
    double sum = 0;
    long active = 0, count = 0;
    std::vector<double> local(static_cast<std::size_t>(n * n), 0.0);
    for (Index a = 0; a < n; ++a)
      for (Index p = 0; p < n; ++p) {
        if (p == a || labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(a)]) continue;
        for (Index q = 0; q < n; ++q) {
          if (labels[static_cast<std::size_t>(q)] == labels[static_cast<std::size_t>(a)]) continue;
          ++count;
          const double term = d[a * n + p] - d[a * n + q] + cfg.margin;
          if (term > 0) {
            ++active;
            sum += term;
            local[static_cast<std::size_t>(a * n + p)] += 1.0;
            local[static_cast<std::size_t>(a * n + q)] -= 1.0;
          }
        }
      }
    const long denom = cfg.reduction == TripletReduction::MeanNonZero ? active : count;
    if (denom > 0) {
      total_loss += sum / static_cast<double>(denom);
      const double w = 1.0 / (static_cast<double>(denom) * static_cast<double>(strips));
      double* c = coef->data() + h * n * n;
      for (Index k = 0; k < n * n; ++k) c[k] = local[static_cast<std::size_t>(k)] * w;
    }
  }
  Tensor<Scalar> out(Shape{1});
  out[0] = static_cast<Scalar>(total_loss / static_cast<double>(strips));
  const std::size_t eid = embeddings.id();
  return embeddings.tape().record(std::move(out), {embeddings}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    const Scalar* e = t.value(eid).data();
    Scalar* ge = t.grad_buffer(eid).data();
    const double up = static_cast<double>(g[0]);
    for (Index h = 0; h < strips; ++h) {
      const double* c = coef->data() + h * n * n;
      const double* d = dist->data() + h * n * n;
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
          const double cij = c[i * n + j];
          if (cij == 0.0 || d[i * n + j] == 0.0) continue;
          const double f = up * cij / d[i * n + j];
          for (Index k = 0; k < dim; ++k) {
            const double diff = static_cast<double>(e[(i * strips + h) * dim + k]) - static_cast<double>(e[(j * strips + h) * dim + k]);
            ge[(i * strips + h) * dim + k] += static_cast<Scalar>(f * diff);
            ge[(j * strips + h) * dim + k] -= static_cast<Scalar>(f * diff);
          }
        }
    }
  });
}

/// Softmax cross-entropy averaged over samples and strips. logits: N x strips x classes.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 3) throw ShapeError("cross_entropy: expected N x strips x classes, got " + shape_string(s));
  const Index n = s[0], strips = s[1], classes = s[2];
  if (classes < 2) throw ConfigError("cross_entropy: need at least two classes");
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("cross_entropy: one label per sample required");
  for (int l : labels)
    if (l < 0 || l >= classes)
      throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
  const Scalar* z = logits.value().data();
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * strips * classes));
  double total = 0;
  for (Index r = 0; r < n * strips; ++r) {
    const Scalar* row = z + r * classes;
    double mx = static_cast<double>(row[0]);
    for (Index k = 1; k < classes; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double se = 0;
    for (Index k = 0; k < classes; ++k) se += std::exp(static_cast<double>(row[k]) - mx);
    const int label = labels[static_cast<std::size_t>(r / strips)];
    total += std::log(se) + mx - static_cast<double>(row[label]);
    for (Index k = 0; k < classes; ++k)
      (*probs)[static_cast<std::size_t>(r * classes + k)] = std::exp(static_cast<double>(row[k]) - mx) / se;
  }
  const double norm = 1.0 / static_cast<double>(n * strips);
  Tensor<Scalar> out(Shape{1});
  out[0] = static_cast<Scalar>(total * norm);
  const std::size_t lid = logits.id();
  return logits.tape().record(std::move(out), {logits}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    Scalar* gz = t.grad_buffer(lid).data();
    const double up = static_cast<double>(g[0]) * norm;
    for (Index r = 0; r < n * strips; ++r) {
      const int label = labels[static_cast<std::size_t>(r / strips)];
      for (Index k = 0; k < classes; ++k) {
        const double target = k == label ? 1.0 : 0.0;
        gz[r * classes + k] += static_cast<Scalar>(up * ((*probs)[static_cast<std::size_t>(r * classes + k)] - target));
      }
    }
  });
}

/// Unweighted sum of the triplet and cross-entropy terms.
template <typename Scalar>
Var<Scalar> combined_loss(const Var<Scalar>& triplet, const Var<Scalar>& cse) {
  return add(triplet, cse);
}

}  // namespace gaitasms
