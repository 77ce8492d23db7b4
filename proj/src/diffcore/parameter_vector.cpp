#include "mbmpo/diffcore/parameter_vector.hpp"

#include <utility>

#include "mbmpo/errors.hpp"

namespace mbmpo {

void ParamLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0) {
    throw ConfigError("parameter block '" + name + "' must have positive shape");
  }
  if (contains(name)) {
    throw ConfigError("duplicate parameter block '" + name + "'");
  }
  entries_.push_back(ParamEntry{std::move(name), rows, cols, size_});
  size_ += rows * cols;
}

const ParamEntry& ParamLayout::entry(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw ConfigError("unknown parameter block '" + std::string(name) + "'");
}

bool ParamLayout::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

ParameterVector::ParameterVector(LayoutPtr layout, Eigen::VectorXd values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_) throw ConfigError("parameter vector requires a layout");
  if (layout_->size() != values_.size()) {
    throw ConfigError("layout has " + std::to_string(layout_->size()) +
                      " elements but values has " + std::to_string(values_.size()));
  }
}

ParameterVector ParameterVector::zeros(LayoutPtr layout) {
  const Eigen::Index n = layout ? layout->size() : 0;
  return ParameterVector(std::move(layout), Eigen::VectorXd::Zero(n));
}

ParameterVector ParameterVector::flatten(
    LayoutPtr layout, const std::map<std::string, Eigen::MatrixXd>& blocks) {
  Eigen::VectorXd values(layout->size());
  for (const auto& e : layout->entries()) {
    auto it = blocks.find(e.name);
    if (it == blocks.end()) throw ConfigError("missing block '" + e.name + "'");
    if (it->second.rows() != e.rows || it->second.cols() != e.cols) {
      throw ConfigError("block '" + e.name + "' has the wrong shape");
    }
    values.segment(e.offset, e.size()) =
        Eigen::Map<const Eigen::VectorXd>(it->second.data(), e.size());
  }
  return ParameterVector(std::move(layout), std::move(values));
}

Eigen::Map<const Eigen::MatrixXd> ParameterVector::block(std::string_view name) const {
  const auto& e = layout_->entry(name);
  return Eigen::Map<const Eigen::MatrixXd>(values_.data() + e.offset, e.rows, e.cols);
}

std::map<std::string, Eigen::MatrixXd> ParameterVector::unflatten() const {
  std::map<std::string, Eigen::MatrixXd> out;
  for (const auto& e : layout_->entries()) out.emplace(e.name, block(e.name));
  return out;
}

ParameterVector ParameterVector::with_values(Eigen::VectorXd values) const {
  return ParameterVector(layout_, std::move(values));
}

ParameterVector ParameterVector::with_block(std::string_view name,
                                            const Eigen::MatrixXd& block) const {
  const auto& e = layout_->entry(name);
  if (block.rows() != e.rows || block.cols() != e.cols) {
    throw ConfigError("block '" + e.name + "' has the wrong shape");
  }
  Eigen::VectorXd v = values_;
  v.segment(e.offset, e.size()) = Eigen::Map<const Eigen::VectorXd>(block.data(), e.size());
  return ParameterVector(layout_, std::move(v));
}

void ParameterVector::check_compatible(const ParameterVector& other) const {
  if (values_.size() != other.values_.size()) {
    throw ConfigError("parameter vectors differ in size");
  }
}

ParameterVector ParameterVector::axpy(double scale, const ParameterVector& other) const {
  check_compatible(other);
  return ParameterVector(layout_, values_ + scale * other.values_);
}

double ParameterVector::dot(const ParameterVector& other) const {
  check_compatible(other);
  return values_.dot(other.values_);
}

double ParameterVector::norm_inf() const {
  return values_.size() == 0 ? 0.0 : values_.cwiseAbs().maxCoeff();
}

ParameterVector operator+(const ParameterVector& a, const ParameterVector& b) {
  a.check_compatible(b);
  return ParameterVector(a.layout_, a.values_ + b.values_);
}

ParameterVector operator-(const ParameterVector& a, const ParameterVector& b) {
  a.check_compatible(b);
  return ParameterVector(a.layout_, a.values_ - b.values_);
}

ParameterVector operator*(double s, const ParameterVector& a) {
  return ParameterVector(a.layout_, s * a.values_);
}

}  // namespace mbmpo
