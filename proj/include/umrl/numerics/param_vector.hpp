#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "umrl/numerics/error.hpp"

namespace umrl {

using Index = Eigen::Index;

struct Segment {
  std::string name;
  std::vector<Index> shape;

  Index size() const {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  }
};

/// Ordered list of named segments describing how a flat parameter vector is
/// carved up. Immutable once built; shared between vectors of the same model.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(std::vector<Segment> segments) : segments_(std::move(segments)) {
    offsets_.reserve(segments_.size());
    for (const auto& s : segments_) {
      offsets_.push_back(total_);
      total_ += s.size();
    }
  }

  Index size() const { return total_; }
  const std::vector<Segment>& segments() const { return segments_; }
  Index offset(std::size_t i) const { return offsets_.at(i); }

  std::size_t find(std::string_view name) const {
    for (std::size_t i = 0; i < segments_.size(); ++i)
      if (segments_[i].name == name) return i;
    throw DimensionError("no segment named '" + std::string(name) + "'");
  }

  bool contains(std::string_view name) const {
    for (const auto& s : segments_)
      if (s.name == name) return true;
    return false;
  }

  /// Name of the segment holding flat index `i`.
  const std::string& segment_of(Index i) const {
    for (std::size_t k = segments_.size(); k-- > 0;)
      if (i >= offsets_[k]) return segments_[k].name;
    return segments_.front().name;
  }

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) {
    if (a.segments_.size() != b.segments_.size()) return false;
    for (std::size_t i = 0; i < a.segments_.size(); ++i)
      if (a.segments_[i].name != b.segments_[i].name || a.segments_[i].shape != b.segments_[i].shape)
        return false;
    return true;
  }

  /// Concatenation with every segment of `other` prefixed by `prefix`.
  ParamLayout concat(const ParamLayout& other, const std::string& prefix = {}) const {
    auto segs = segments_;
    for (auto s : other.segments_) {
      s.name = prefix + s.name;
      segs.push_back(std::move(s));
    }
    return ParamLayout(std::move(segs));
  }

 private:
  std::vector<Segment> segments_;
  std::vector<Index> offsets_;
  Index total_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

inline LayoutPtr make_layout(std::vector<Segment> segments) {
  return std::make_shared<const ParamLayout>(std::move(segments));
}

/// Flat trainable parameters plus the segment layout they follow.
template <typename Scalar>
class BasicParamVector {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  BasicParamVector() : layout_(std::make_shared<const ParamLayout>()) {}

  explicit BasicParamVector(LayoutPtr layout)
      : layout_(std::move(layout)), values_(Vector::Zero(layout_->size())) {}

  BasicParamVector(LayoutPtr layout, Vector values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (values_.size() != layout_->size())
      throw DimensionError("parameter vector of length " + std::to_string(values_.size()) +
                           " does not match layout of length " + std::to_string(layout_->size()));
  }

  static BasicParamVector zeros_like(const BasicParamVector& other) {
    return BasicParamVector(other.layout_);
  }

  Index size() const { return values_.size(); }
  const ParamLayout& layout() const { return *layout_; }
  const LayoutPtr& layout_ptr() const { return layout_; }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  auto segment(std::string_view name) {
    const auto k = layout_->find(name);
    return values_.segment(layout_->offset(k), layout_->segments()[k].size());
  }
  auto segment(std::string_view name) const {
    const auto k = layout_->find(name);
    return values_.segment(layout_->offset(k), layout_->segments()[k].size());
  }

  /// 2-D segment viewed as a column-major matrix of its declared shape.
  Eigen::Map<Matrix> matrix(std::string_view name) {
    const auto k = layout_->find(name);
    const auto& shape = layout_->segments()[k].shape;
    if (shape.size() != 2) throw DimensionError("segment '" + std::string(name) + "' is not 2-D");
    return {values_.data() + layout_->offset(k), shape[0], shape[1]};
  }
  Eigen::Map<const Matrix> matrix(std::string_view name) const {
    const auto k = layout_->find(name);
    const auto& shape = layout_->segments()[k].shape;
    if (shape.size() != 2) throw DimensionError("segment '" + std::string(name) + "' is not 2-D");
    return {values_.data() + layout_->offset(k), shape[0], shape[1]};
  }

  bool same_layout(const BasicParamVector& other) const {
    return layout_ == other.layout_ || *layout_ == *other.layout_;
  }

  void require_same_layout(const BasicParamVector& other, std::string_view what) const {
    if (!same_layout(other))
      throw DimensionError(std::string(what) + ": parameter layouts differ (" +
                           std::to_string(size()) + " vs " + std::to_string(other.size()) + ")");
  }

  bool all_finite() const { return values_.allFinite(); }

  /// Throws NonFiniteError naming the first segment with a NaN/Inf entry.
  void require_finite(std::string_view context) const {
    for (Index i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(static_cast<double>(values_[i])))
        throw NonFiniteError(std::string(context) + ": non-finite value in segment '" +
                             layout_->segment_of(i) + "'");
    }
  }

 private:
  LayoutPtr layout_;
  Vector values_;
};

using ParamVector = BasicParamVector<double>;

}  // namespace umrl
