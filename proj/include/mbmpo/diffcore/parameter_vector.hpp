#ifndef MBMPO_DIFFCORE_PARAMETER_VECTOR_HPP_
#define MBMPO_DIFFCORE_PARAMETER_VECTOR_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace mbmpo {

// One named block of a flat parameter store. Blocks are stored column-major.
struct ParamEntry {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return rows * cols; }
  bool operator==(const ParamEntry&) const = default;
};

// Ordered list of named blocks. Order is insertion order and never changes.
class ParamLayout {
 public:
  ParamLayout() = default;

  void add(std::string name, Eigen::Index rows, Eigen::Index cols);
  const ParamEntry& entry(std::string_view name) const;
  bool contains(std::string_view name) const;

  const std::vector<ParamEntry>& entries() const { return entries_; }
  Eigen::Index size() const { return size_; }

  bool operator==(const ParamLayout& other) const {
    return entries_ == other.entries_;
  }

 private:
  std::vector<ParamEntry> entries_;
  Eigen::Index size_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

// Immutable flat real-valued parameter store with a named layout. Arithmetic
// produces new vectors.
class ParameterVector {
 public:
  ParameterVector() = default;
  ParameterVector(LayoutPtr layout, Eigen::VectorXd values);

  static ParameterVector zeros(LayoutPtr layout);
  // inverse of unflatten(); every block of the layout must be present
  static ParameterVector flatten(LayoutPtr layout,
                                 const std::map<std::string, Eigen::MatrixXd>& blocks);

  const Eigen::VectorXd& values() const { return values_; }
  const LayoutPtr& layout() const { return layout_; }
  Eigen::Index size() const { return values_.size(); }
  double operator[](Eigen::Index i) const { return values_[i]; }

  Eigen::Map<const Eigen::MatrixXd> block(std::string_view name) const;
  std::map<std::string, Eigen::MatrixXd> unflatten() const;

  ParameterVector with_values(Eigen::VectorXd values) const;
  ParameterVector with_block(std::string_view name, const Eigen::MatrixXd& block) const;

  // this + scale * other
  ParameterVector axpy(double scale, const ParameterVector& other) const;
  double dot(const ParameterVector& other) const;
  double norm() const { return values_.norm(); }
  double norm_inf() const;
  bool all_finite() const { return values_.allFinite(); }

  friend ParameterVector operator+(const ParameterVector& a, const ParameterVector& b);
  friend ParameterVector operator-(const ParameterVector& a, const ParameterVector& b);
  friend ParameterVector operator*(double s, const ParameterVector& a);

 private:
  void check_compatible(const ParameterVector& other) const;

  LayoutPtr layout_;
  Eigen::VectorXd values_;
};

}  // namespace mbmpo

#endif  // MBMPO_DIFFCORE_PARAMETER_VECTOR_HPP_
