#include "dtts/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are not supported");

namespace dtts {

namespace {

constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kFeatureVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open '" + path + "' for writing");
    path_ = path;
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw std::runtime_error("write failed on '" + path_ + "'");
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32s(const std::vector<float>& v) {
    if (!v.empty()) bytes(v.data(), v.size() * 4);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("cannot open '" + path + "' for reading");
  }

  void bytes(void* p, std::size_t n) {
    if (n == 0) return;
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw std::runtime_error("'" + path_ + "' truncated at byte " + std::to_string(offset_));
    }
    offset_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::string str(std::size_t max_len = 1u << 20) {
    const std::uint32_t n = u32();
    if (n > max_len) {
      throw std::runtime_error("'" + path_ + "' has oversized string (" + std::to_string(n) +
                               " bytes) at byte " + std::to_string(offset_ - 4));
    }
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

  void expect_magic(const char (&magic)[5]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0) {
      throw std::runtime_error("'" + path_ + "' has bad magic at byte 0 (expected " +
                               std::string(magic, 4) + ")");
    }
  }

 private:
  std::ifstream in_;
  std::string path_;
  std::size_t offset_ = 0;
};

std::uint8_t profile_tag(FeatureProfile p) {
  switch (p) {
    case FeatureProfile::world67: return 0;
    case FeatureProfile::lpcnet23: return 1;
    case FeatureProfile::custom: return 2;
  }
  return 2;
}

FeatureProfile profile_from_tag(std::uint8_t t, const Reader& r) {
  switch (t) {
    case 0: return FeatureProfile::world67;
    case 1: return FeatureProfile::lpcnet23;
    case 2: return FeatureProfile::custom;
  }
  throw std::runtime_error("'" + r.path() + "' has unknown feature profile tag " +
                           std::to_string(static_cast<int>(t)));
}

}  // namespace

void save_model(Model<float>& model, const std::string& path) {
  Writer w(path);
  w.bytes("DTTS", 4);
  w.u32(kModelVersion);
  const std::string cfg = nlohmann::json(model.config()).dump();
  w.str(cfg);
  const auto& params = model.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, var] : params) {
    const Tensor<float>& t = model.tape().val(var);
    w.str(name);
    w.u8(0);  // dtype f32
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.data);
  }
}

Model<float> load_model(const std::string& path) {
  Reader r(path);
  r.expect_magic("DTTS");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) {
    throw std::runtime_error("'" + path + "' has unsupported model format version " +
                             std::to_string(version));
  }
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(r.str()).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("'" + path + "' has malformed config blob: " + e.what());
  }
  Model<float> model(cfg, /*seed=*/0);

  std::map<std::string, Model<float>::Var> by_name;
  for (const auto& [name, var] : model.params()) by_name.emplace(name, var);

  const std::uint32_t n = r.u32();
  if (n != by_name.size()) {
    throw std::runtime_error("'" + path + "' stores " + std::to_string(n) + " tensors, config implies " +
                             std::to_string(by_name.size()));
  }
  std::map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("'" + path + "' has unknown tensor '" + name + "'");
    }
    if (seen[name]) throw std::runtime_error("'" + path + "' repeats tensor '" + name + "'");
    seen[name] = true;
    if (r.u8() != 0) throw std::runtime_error("'" + path + "' tensor '" + name + "' has unsupported dtype");
    Tensor<float>& dst = model.tape().mutable_val(it->second);
    const std::uint8_t rank = r.u8();
    if (rank != dst.rank()) {
      throw std::runtime_error("'" + path + "' tensor '" + name + "' has rank " +
                               std::to_string(static_cast<int>(rank)) + ", expected " +
                               std::to_string(dst.rank()));
    }
    for (std::int64_t d = 0; d < dst.rank(); ++d) {
      const std::uint32_t dim = r.u32();
      if (static_cast<std::int64_t>(dim) != dst.shape[static_cast<std::size_t>(d)]) {
        throw std::runtime_error("'" + path + "' tensor '" + name + "' dim " + std::to_string(d) +
                                 " is " + std::to_string(dim) + ", expected " +
                                 std::to_string(dst.shape[static_cast<std::size_t>(d)]));
      }
    }
    r.bytes(dst.data.data(), dst.data.size() * 4);
  }
  return model;
}

void write_features(const FeatureMatrix& fm, const std::string& path) {
  if (fm.frames.rank() != 2) throw std::invalid_argument("features must be [T, D]");
  Writer w(path);
  w.bytes("DTTF", 4);
  w.u32(kFeatureVersion);
  w.u8(profile_tag(fm.profile));
  w.u32(static_cast<std::uint32_t>(fm.frames.rows()));
  w.u32(static_cast<std::uint32_t>(fm.frames.cols()));
  w.f32s(fm.frames.data);
}

FeatureMatrix read_features(const std::string& path) {
  Reader r(path);
  r.expect_magic("DTTF");
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion) {
    throw std::runtime_error("'" + path + "' has unsupported feature format version " +
                             std::to_string(version));
  }
  FeatureMatrix fm;
  fm.profile = profile_from_tag(r.u8(), r);
  const std::uint32_t t = r.u32();
  const std::uint32_t d = r.u32();
  if (fm.profile == FeatureProfile::world67 && d != 67) {
    throw std::runtime_error("'" + path + "' declares world67 but dim is " + std::to_string(d));
  }
  if (fm.profile == FeatureProfile::lpcnet23 && d != 23) {
    throw std::runtime_error("'" + path + "' declares lpcnet23 but dim is " + std::to_string(d));
  }
  fm.frames = Tensor<float>({static_cast<std::int64_t>(t), static_cast<std::int64_t>(d)});
  r.bytes(fm.frames.data.data(), fm.frames.data.size() * 4);
  return fm;
}

}  // namespace dtts
