#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtlta/tensor.hpp"

namespace mtlta {

/// Ordered collection of named parameter tensors.
///
/// Manifest format (text, UTF-8):
///
///     mtlta-params 1
///     <count>
///     <name> <rank> <dim>... followed by numel values in C99 hexfloat, one per line
///
/// Hexfloat keeps the fp64 values bit-exact across save/load.
class ParamSet {
 public:
  void add(std::string name, Tensor tensor);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  /// Total number of scalar parameters.
  std::size_t count() const;

  void save(const std::filesystem::path& path) const;
  void write(std::ostream& out) const;
  /// Loads values into the already-constructed tensors; names, order and shapes must match.
  void load(const std::filesystem::path& path);
  void read(std::istream& in, const std::string& source);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace mtlta
