#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "updown/tensor.hpp"

namespace updown {

/// A named learned tensor with its gradient and optimizer state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Set once a backward pass has accumulated into `grad`.
  bool touched = false;

  // Optimizer state; empty until the optimizer first runs.
  Tensor momentum;
  Tensor sq_grad;
  Tensor sq_update;
};

/// Owns the learned parameters of a model. Parameters have stable addresses
/// for the lifetime of the store.
class ParamStore {
 public:
  static constexpr std::uint8_t kFormatVersion = 1;

  Parameter& add(std::string name, Tensor init);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  bool any_grad() const;
  double grad_norm() const;

  /// Writes parameter values, and optionally optimizer state under
  /// "<name>#<slot>" entries, in the UDPM binary layout.
  void save(const std::filesystem::path& path, bool with_optimizer_state = false) const;
  /// Loads values into an already-shaped store. Every stored parameter must
  /// exist here with the same shape. Returns the extra scalar metadata
  /// entries ("@key") found in the file.
  std::map<std::string, double> load_into(const std::filesystem::path& path);
  /// Reads a file into a fresh store, shapes taken from the file.
  static ParamStore load(const std::filesystem::path& path);

  /// Scalar entries written alongside parameters, e.g. the training step.
  void set_meta(std::string key, double value) { meta_[std::move(key)] = value; }
  const std::map<std::string, double>& meta() const { return meta_; }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::map<std::string, double> meta_;
};

}  // namespace updown
