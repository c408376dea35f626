#include "mtlta/params.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>

#include "mtlta/errors.hpp"

namespace mtlta {
namespace {

constexpr std::string_view kMagic = "mtlta-params";
constexpr int kVersion = 1;

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

}  // namespace

void ParamSet::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ConfigError("params", "duplicate parameter name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor& ParamSet::get(std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw IndexError("no parameter named '" + std::string(name) + "'");
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParamSet::write(std::ostream& out) const {
  out << kMagic << ' ' << kVersion << '\n' << entries_.size() << '\n';
  for (const auto& [name, t] : entries_) {
    out << name << ' ' << t.rank();
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
    for (double v : t.values()) out << hexfloat(v) << '\n';
  }
}

void ParamSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write parameters to " + path.string());
  write(out);
  if (!out) throw DataError("failed writing " + path.string());
}

void ParamSet::read(std::istream& in, const std::string& source) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version) || magic != kMagic) throw DataError(source + ": not a parameter manifest");
  if (version != kVersion) throw DataError(source + ": unsupported manifest version " + std::to_string(version));
  if (!(in >> count) || count != entries_.size()) {
    throw DataError(source + ": expected " + std::to_string(entries_.size()) + " parameters");
  }
  for (auto& [name, t] : entries_) {
    std::string got;
    std::size_t rank = 0;
    if (!(in >> got >> rank) || got != name) throw DataError(source + ": expected parameter '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) in >> d;
    if (!in || shape != t.shape()) {
      throw DataError(source + ": parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                      shape_string(t.shape()));
    }
    auto values = t.mutable_values();
    for (auto& v : values) {
      std::string tok;
      if (!(in >> tok)) throw DataError(source + ": truncated values for '" + name + "'");
      char* end = nullptr;
      v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') throw DataError(source + ": bad number '" + tok + "' in '" + name + "'");
    }
  }
}

void ParamSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read parameters from " + path.string());
  read(in, path.string());
}

}  // namespace mtlta
