#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aftse/autodiff.hpp"

namespace aftse {

/// Ordered collection of named real tensors. Insertion order is the
/// canonical order used for flattening, reduction and serialisation.
class ParamStore {
 public:
  std::size_t add(std::string name, Eigen::MatrixXd value);

  std::size_t size() const { return tensors_.size(); }
  Eigen::Index total_count() const;

  const std::string& name(std::size_t i) const { return names_[i]; }
  Eigen::MatrixXd& operator[](std::size_t i) { return tensors_[i]; }
  const Eigen::MatrixXd& operator[](std::size_t i) const { return tensors_[i]; }
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  /// Same names and shapes, all zeros.
  ParamStore zeros_like() const;
  bool same_layout(const ParamStore& other) const;
  bool all_finite() const;

  /// Flat coordinate access across tensors (canonical order, column-major inside).
  double& coord(Eigen::Index flat);
  double coord(Eigen::Index flat) const;

  ParamStore& operator+=(const ParamStore& other);
  ParamStore& operator*=(double c);
  double squared_norm() const;

 private:
  std::vector<std::string> names_;
  std::vector<Eigen::MatrixXd> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape, either as differentiable leaves or as constants.
class BoundParams {
 public:
  static BoundParams differentiable(ad::Tape& tape, const ParamStore& params);
  static BoundParams frozen(ad::Tape& tape, const ParamStore& params);

  const ad::Var& operator[](std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }
  /// Collects leaf gradients after tape.backward(); untouched leaves give zeros.
  ParamStore gradients(const ad::Tape& tape) const;

 private:
  const ParamStore* params_ = nullptr;
  std::vector<ad::Var> vars_;
};

// Checkpoint container (little-endian):
//   bytes 0..7   magic "AFTSECK1"
//   bytes 8..11  u32 container version (1)
//   bytes 12..15 u32 manifest length M
//   bytes 16..   M bytes UTF-8 JSON manifest:
//                {"version":1, "meta":{...}, "tensors":[{"name","shape":[rows,cols],
//                 "dtype":"f64","offset":byte offset into payload}, ...]}
//   payload      concatenated f64 column-major tensor data
struct Checkpoint {
  std::map<std::string, ParamStore> groups;  // e.g. "params", "adam.m", "adam.v"
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64-bit digest of a file's bytes, hex encoded.
std::string file_digest(const std::filesystem::path& path);

}  // namespace aftse
