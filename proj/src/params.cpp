#include "aftse/params.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "aftse/errors.hpp"

namespace aftse {

std::size_t ParamStore::add(std::string name, Eigen::MatrixXd value) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  const std::size_t i = tensors_.size();
  index_.emplace(name, i);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return i;
}

Eigen::Index ParamStore::total_count() const {
  Eigen::Index n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (std::size_t i = 0; i < size(); ++i) {
    out.add(names_[i], Eigen::MatrixXd::Zero(tensors_[i].rows(), tensors_[i].cols()));
  }
  return out;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || tensors_[i].rows() != other.tensors_[i].rows() ||
        tensors_[i].cols() != other.tensors_[i].cols()) {
      return false;
    }
  }
  return true;
}

bool ParamStore::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.allFinite()) return false;
  }
  return true;
}

double& ParamStore::coord(Eigen::Index flat) {
  for (auto& t : tensors_) {
    if (flat < t.size()) return t.data()[flat];
    flat -= t.size();
  }
  throw ValidationError("flat parameter index out of range");
}

double ParamStore::coord(Eigen::Index flat) const { return const_cast<ParamStore*>(this)->coord(flat); }

ParamStore& ParamStore::operator+=(const ParamStore& other) {
  if (!same_layout(other)) throw ValidationError("parameter layout mismatch in accumulation");
  for (std::size_t i = 0; i < size(); ++i) tensors_[i] += other.tensors_[i];
  return *this;
}

ParamStore& ParamStore::operator*=(double c) {
  for (auto& t : tensors_) t *= c;
  return *this;
}

double ParamStore::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) s += t.squaredNorm();
  return s;
}

BoundParams BoundParams::differentiable(ad::Tape& tape, const ParamStore& params) {
  BoundParams b;
  b.params_ = &params;
  b.vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) b.vars_.push_back(tape.leaf(params[i]));
  return b;
}

BoundParams BoundParams::frozen(ad::Tape& tape, const ParamStore& params) {
  BoundParams b;
  b.params_ = &params;
  b.vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) b.vars_.push_back(tape.constant_ref(params[i]));
  return b;
}

ParamStore BoundParams::gradients(const ad::Tape& tape) const {
  ParamStore g = params_->zeros_like();
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (const auto* gi = tape.grad(vars_[i])) g[i] = *gi;
  }
  return g;
}

namespace {

constexpr char kMagic[8] = {'A', 'F', 'T', 'S', 'E', 'C', 'K', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["meta"] = ckpt.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [group, store] : ckpt.groups) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      manifest["tensors"].push_back({{"name", group + "/" + store.name(i)},
                                     {"shape", {store[i].rows(), store[i].cols()}},
                                     {"dtype", "f64"},
                                     {"offset", offset}});
      offset += static_cast<std::uint64_t>(store[i].size()) * sizeof(double);
    }
  }
  const std::string text = manifest.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write " + tmp);
    os.write(kMagic, 8);
    put<std::uint32_t>(os, 1);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [group, store] : ckpt.groups) {
      for (std::size_t i = 0; i < store.size(); ++i) {
        os.write(reinterpret_cast<const char*>(store[i].data()),
                 static_cast<std::streamsize>(store[i].size() * sizeof(double)));
      }
    }
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0, len = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&len), 4);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + ": not a checkpoint");
  if (version != 1) throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw IoError(path.string() + ": truncated manifest");
  const auto manifest = nlohmann::json::parse(text);
  const std::streamoff payload = is.tellg();

  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    const std::string full = t.at("name").get<std::string>();
    if (t.at("dtype") != "f64") throw IoError(path.string() + ": unsupported dtype for " + full);
    const auto slash = full.find('/');
    if (slash == std::string::npos) throw IoError(path.string() + ": malformed tensor name " + full);
    const auto rows = t.at("shape")[0].get<Eigen::Index>();
    const auto cols = t.at("shape")[1].get<Eigen::Index>();
    Eigen::MatrixXd m(rows, cols);
    is.seekg(payload + t.at("offset").get<std::streamoff>());
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw IoError(path.string() + ": truncated payload for " + full);
    }
    ckpt.groups[full.substr(0, slash)].add(full.substr(slash + 1), std::move(m));
  }
  return ckpt;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace aftse
