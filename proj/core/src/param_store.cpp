#include "updown/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "updown/binary_io.hpp"
#include "updown/errors.hpp"

namespace updown {

namespace {

constexpr char kMagic[4] = {'U', 'D', 'P', 'M'};

struct Entry {
  std::string name;
  Tensor value;
};

void write_entry(ByteWriter& w, const std::string& name, const Tensor& t) {
  if (name.size() > 0xFFFF) throw std::invalid_argument("param name too long: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f64(v);
}

std::vector<Entry> read_entries(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path));
  if (r.bytes(4) != std::string(kMagic, 4)) {
    throw FormatError(FormatErrorCode::bad_magic, "bad magic");
  }
  const auto version = r.u8();
  if (version != ParamStore::kFormatVersion) {
    throw FormatError(FormatErrorCode::unsupported_version,
                      "unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<Entry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.bytes(r.u16());
    const auto rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = r.f64();
    e.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError(FormatErrorCode::malformed, "trailing bytes");
  return out;
}

}  // namespace

Parameter& ParamStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  index_.emplace(name, params_.size());
  Parameter& p = params_.emplace_back();
  p.name = std::move(name);
  p.grad = Tensor(init.shape());
  p.value = std::move(init);
  return p;
}

Parameter* ParamStore::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParamStore::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter& ParamStore::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Parameter& ParamStore::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("no parameter named " + std::string(name));
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    p.grad.fill(0.0);
    p.touched = false;
  }
}

bool ParamStore::any_grad() const {
  for (const auto& p : params_)
    if (p.touched) return true;
  return false;
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_)
    for (double g : p.grad.values()) sq += g * g;
  return std::sqrt(sq);
}

void ParamStore::save(const std::filesystem::path& path, bool with_optimizer_state) const {
  std::uint32_t count = 0;
  ByteWriter body;
  for (const auto& p : params_) {
    write_entry(body, p.name, p.value);
    ++count;
    if (!with_optimizer_state) continue;
    const std::pair<const char*, const Tensor*> slots[] = {
        {"#momentum", &p.momentum}, {"#sq_grad", &p.sq_grad}, {"#sq_update", &p.sq_update}};
    for (const auto& [suffix, t] : slots) {
      if (t->empty()) continue;
      write_entry(body, p.name + suffix, *t);
      ++count;
    }
  }
  for (const auto& [key, v] : meta_) {
    write_entry(body, "@" + key, Tensor({1}, std::vector<double>{v}));
    ++count;
  }
  ByteWriter w;
  w.bytes(std::string_view(kMagic, 4));
  w.u8(kFormatVersion);
  w.u32(count);
  w.bytes(body.str());
  write_file_bytes(path, w.str());
}

std::map<std::string, double> ParamStore::load_into(const std::filesystem::path& path) {
  std::map<std::string, double> meta;
  for (auto& e : read_entries(path)) {
    if (!e.name.empty() && e.name[0] == '@') {
      meta[e.name.substr(1)] = e.value.size() ? e.value[0] : 0.0;
      continue;
    }
    const auto hash = e.name.find('#');
    const std::string base = e.name.substr(0, hash);
    Parameter* p = find(base);
    if (!p) throw FormatError(FormatErrorCode::malformed, "unknown parameter " + base);
    if (e.value.shape() != p->value.shape()) {
      throw FormatError(FormatErrorCode::malformed,
                        "shape mismatch for " + e.name + ": file " +
                            shape_string(e.value.shape()) + ", model " +
                            shape_string(p->value.shape()));
    }
    if (hash == std::string::npos) {
      p->value = std::move(e.value);
    } else {
      const std::string slot = e.name.substr(hash + 1);
      if (slot == "momentum") p->momentum = std::move(e.value);
      else if (slot == "sq_grad") p->sq_grad = std::move(e.value);
      else if (slot == "sq_update") p->sq_update = std::move(e.value);
      else throw FormatError(FormatErrorCode::malformed, "unknown state slot " + e.name);
    }
  }
  meta_ = meta;
  return meta;
}

ParamStore ParamStore::load(const std::filesystem::path& path) {
  ParamStore store;
  for (auto& e : read_entries(path)) {
    if (!e.name.empty() && e.name[0] == '@') {
      store.meta_[e.name.substr(1)] = e.value.size() ? e.value[0] : 0.0;
      continue;
    }
    const auto hash = e.name.find('#');
    if (hash == std::string::npos) {
      store.add(e.name, std::move(e.value));
      continue;
    }
    Parameter& p = store.at(e.name.substr(0, hash));
    const std::string slot = e.name.substr(hash + 1);
    if (slot == "momentum") p.momentum = std::move(e.value);
    else if (slot == "sq_grad") p.sq_grad = std::move(e.value);
    else if (slot == "sq_update") p.sq_update = std::move(e.value);
    else throw FormatError(FormatErrorCode::malformed, "unknown state slot " + e.name);
  }
  return store;
}

}  // namespace updown
