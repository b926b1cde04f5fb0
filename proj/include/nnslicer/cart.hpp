#pragma once

// CART classification tree with Gini impurity.
//
// Features live in a column-major matrix. Small integral feature types (the
// per-sample slice vectors are int8) are split by value histograms; other types
// by sorting. Split choice is deterministic: lowest weighted impurity, then
// lowest feature index, then lowest threshold. A sample goes left when
// value <= threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace nnslicer {

template <class T>
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, T{}) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  T& at(std::size_t row, std::size_t col) { return data_[col * rows_ + row]; }
  T at(std::size_t row, std::size_t col) const { return data_[col * rows_ + row]; }
  std::span<const T> column(std::size_t col) const { return {data_.data() + col * rows_, rows_}; }

  std::vector<T> row(std::size_t r) const {
    std::vector<T> out(cols_);
    for (std::size_t c = 0; c < cols_; ++c) out[c] = at(r, c);
    return out;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<T> data_;
};

struct CartConfig {
  std::size_t max_depth = 25;
  std::size_t min_leaf = 5;
};

inline constexpr std::uint64_t kLeafFeature = std::numeric_limits<std::uint64_t>::max();

// Pre-order node record. Leaves have feature == kLeafFeature and label >= 0;
// internal nodes have label == -1 and their left child immediately follows.
struct TreeNode {
  std::uint64_t feature = kLeafFeature;
  float threshold = 0;
  std::int32_t label = -1;
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class DecisionTree {
 public:
  DecisionTree() = default;

  // Validates the pre-order layout and rebuilds the child links.
  explicit DecisionTree(std::vector<TreeNode> nodes, std::uint64_t feature_count = kLeafFeature)
      : nodes_(std::move(nodes)) {
    if (nodes_.empty()) throw std::invalid_argument("decision tree has no nodes");
    right_.assign(nodes_.size(), 0);
    std::size_t pos = 0;
    link(pos, 0, feature_count);
    if (pos != nodes_.size()) throw std::invalid_argument("decision tree has trailing nodes");
  }

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::size_t depth() const {
    std::size_t best = 0;
    walk_depth(0, 0, best);
    return best;
  }

  // Index of the leaf reached by `x`.
  template <class V>
  std::size_t leaf_of(std::span<const V> x) const {
    std::size_t i = 0;
    while (nodes_[i].feature != kLeafFeature) {
      const auto f = nodes_[i].feature;
      if (f >= x.size()) throw std::invalid_argument("feature vector shorter than the tree expects");
      i = static_cast<double>(x[f]) <= static_cast<double>(nodes_[i].threshold) ? i + 1 : right_[i];
    }
    return i;
  }

  template <class V>
  int predict(std::span<const V> x) const {
    return nodes_[leaf_of(x)].label;
  }

  void set_leaf_label(std::size_t node, int label) {
    if (nodes_.at(node).feature != kLeafFeature) throw std::invalid_argument("not a leaf");
    nodes_[node].label = label;
  }

  friend bool operator==(const DecisionTree& a, const DecisionTree& b) { return a.nodes_ == b.nodes_; }

 private:
  void link(std::size_t& pos, std::size_t depth, std::uint64_t feature_count) {
    if (pos >= nodes_.size()) throw std::invalid_argument("decision tree is truncated");
    if (depth > 10000) throw std::invalid_argument("decision tree is too deep");
    const std::size_t me = pos++;
    const auto& n = nodes_[me];
    if (n.feature == kLeafFeature) {
      if (n.label < 0) throw std::invalid_argument("leaf without a label");
      return;
    }
    if (n.label != -1) throw std::invalid_argument("internal node with a label");
    if (feature_count != kLeafFeature && n.feature >= feature_count)
      throw std::invalid_argument("split feature out of range");
    link(pos, depth + 1, feature_count);
    right_[me] = pos;
    link(pos, depth + 1, feature_count);
  }

  void walk_depth(std::size_t i, std::size_t d, std::size_t& best) const {
    best = std::max(best, d);
    if (nodes_[i].feature == kLeafFeature) return;
    walk_depth(i + 1, d + 1, best);
    walk_depth(right_[i], d + 1, best);
  }

  std::vector<TreeNode> nodes_;
  std::vector<std::size_t> right_;
};

namespace detail {

struct Split {
  bool found = false;
  double score = 0;  // sum over children of (sum of squared class counts / size); larger is purer
  std::uint64_t feature = 0;
  double threshold = 0;
};

inline double purity(const std::vector<std::size_t>& counts, std::size_t n) {
  double s = 0;
  for (auto c : counts) s += static_cast<double>(c) * static_cast<double>(c);
  return s / static_cast<double>(n);
}

template <class T>
class CartBuilder {
 public:
  CartBuilder(const FeatureMatrix<T>& X, std::span<const int> y, std::size_t classes, const CartConfig& cfg,
              std::span<const std::uint8_t> usable)
      : X_(X), y_(y), classes_(classes), cfg_(cfg), live_(X.cols(), 0) {
    for (std::size_t f = 0; f < X.cols(); ++f) {
      if (!usable.empty() && !usable[f]) continue;
      auto col = X.column(f);
      live_[f] = std::any_of(col.begin(), col.end(), [&](T v) { return v != col[0]; });
    }
  }

  std::vector<TreeNode> build() {
    std::vector<std::size_t> idx(X_.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    grow(idx, 0);
    return std::move(nodes_);
  }

 private:
  void grow(std::vector<std::size_t>& idx, std::size_t depth) {
    std::vector<std::size_t> counts(classes_, 0);
    for (auto i : idx) ++counts[static_cast<std::size_t>(y_[i])];
    int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    const bool pure = counts[static_cast<std::size_t>(majority)] == idx.size();
    Split best;
    if (!pure && depth < cfg_.max_depth && idx.size() >= 2 * cfg_.min_leaf) best = find_split(idx);
    if (!best.found) {
      nodes_.push_back({kLeafFeature, 0.0f, majority});
      return;
    }
    const float th = static_cast<float>(best.threshold);
    nodes_.push_back({best.feature, th, -1});
    std::vector<std::size_t> left, right;
    for (auto i : idx)
      (static_cast<double>(X_.at(i, best.feature)) <= static_cast<double>(th) ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    grow(left, depth + 1);
    grow(right, depth + 1);
  }

  void consider(Split& best, double score, std::uint64_t f, double threshold) const {
    // Candidates arrive in (feature, threshold) order, so only a strictly better score replaces.
    if (!best.found || score > best.score + 1e-12 * std::abs(best.score)) best = {true, score, f, threshold};
  }

  Split find_split(const std::vector<std::size_t>& idx) {
    Split best;
    const std::size_t n = idx.size();
    std::vector<std::size_t> lc(classes_), rc(classes_), total(classes_, 0);
    for (auto i : idx) ++total[static_cast<std::size_t>(y_[i])];
    for (std::size_t f = 0; f < X_.cols(); ++f) {
      if (!live_[f]) continue;
      auto col = X_.column(f);
      if constexpr (std::is_integral_v<T> && sizeof(T) == 1) {
        constexpr int kOff = std::is_signed_v<T> ? 128 : 0;
        if (hist_.size() != 256 * classes_) hist_.assign(256 * classes_, 0);
        int lo = 255, hi = 0;
        for (auto i : idx) {
          int v = static_cast<int>(col[i]) + kOff;
          ++hist_[static_cast<std::size_t>(v) * classes_ + static_cast<std::size_t>(y_[i])];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        struct Clear {
          std::vector<std::size_t>& h;
          std::size_t from, to;
          ~Clear() { std::fill(h.begin() + static_cast<std::ptrdiff_t>(from), h.begin() + static_cast<std::ptrdiff_t>(to), 0); }
        } clear{hist_, static_cast<std::size_t>(lo) * classes_, static_cast<std::size_t>(hi + 1) * classes_};
        if (lo == hi) continue;
        std::fill(lc.begin(), lc.end(), 0);
        std::size_t nl = 0;
        for (int v = lo; v < hi; ++v) {
          std::size_t here = 0;
          for (std::size_t k = 0; k < classes_; ++k) {
            lc[k] += hist_[static_cast<std::size_t>(v) * classes_ + k];
            here += hist_[static_cast<std::size_t>(v) * classes_ + k];
          }
          if (here == 0) continue;
          nl += here;
          int next = v + 1;
          while (next <= hi && !any_at(next)) ++next;
          if (nl < cfg_.min_leaf || n - nl < cfg_.min_leaf) continue;
          for (std::size_t k = 0; k < classes_; ++k) rc[k] = total[k] - lc[k];
          double score = purity(lc, nl) + purity(rc, n - nl);
          consider(best, score, f, 0.5 * ((v - kOff) + (next - kOff)));
        }
      } else {
        order_.assign(idx.begin(), idx.end());
        std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
        std::fill(lc.begin(), lc.end(), 0);
        for (std::size_t k = 0; k + 1 < n; ++k) {
          ++lc[static_cast<std::size_t>(y_[order_[k]])];
          double a = static_cast<double>(col[order_[k]]), b = static_cast<double>(col[order_[k + 1]]);
          if (a == b) continue;
          std::size_t nl = k + 1;
          if (nl < cfg_.min_leaf || n - nl < cfg_.min_leaf) continue;
          for (std::size_t c = 0; c < classes_; ++c) rc[c] = total[c] - lc[c];
          double score = purity(lc, nl) + purity(rc, n - nl);
          double th = 0.5 * (a + b);
          if (static_cast<double>(static_cast<float>(th)) < a || static_cast<double>(static_cast<float>(th)) >= b) th = a;
          consider(best, score, f, th);
        }
      }
    }
    return best;
  }

  bool any_at(int v) const {
    for (std::size_t k = 0; k < classes_; ++k)
      if (hist_[static_cast<std::size_t>(v) * classes_ + k]) return true;
    return false;
  }

  const FeatureMatrix<T>& X_;
  std::span<const int> y_;
  std::size_t classes_;
  CartConfig cfg_;
  std::vector<std::uint8_t> live_;
  std::vector<std::size_t> hist_, order_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

// `usable`, when non-empty, restricts the split candidates to features with a nonzero flag.
template <class T>
DecisionTree cart_fit(const FeatureMatrix<T>& X, std::span<const int> labels, const CartConfig& cfg = {},
                      std::span<const std::uint8_t> usable = {}) {
  if (!usable.empty() && usable.size() != X.cols()) throw std::invalid_argument("feature mask length mismatch");
  if (X.rows() == 0) throw std::invalid_argument("cannot fit a tree on an empty training set");
  if (labels.size() != X.rows()) throw std::invalid_argument("one label per training row is required");
  if (cfg.min_leaf < 1) throw std::invalid_argument("min leaf size must be >= 1");
  int hi = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("labels must be non-negative");
    hi = std::max(hi, l);
  }
  detail::CartBuilder<T> b(X, labels, static_cast<std::size_t>(hi) + 1, cfg, usable);
  return DecisionTree(b.build(), X.cols());
}

}  // namespace nnslicer
