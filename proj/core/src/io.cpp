#include "vskel/io.hpp"

#include <openssl/evp.h>

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace vskel::io {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, fs::path path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const char* raw(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path_.string() + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("unexpected end of file");
  }
  std::string bytes_;
  fs::path path_;
  std::size_t pos_ = 0;
};

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

VvolHeader parse_header(Reader& r) {
  if (r.get_bytes(4) != "VVOL") r.fail("not a VVOL file (bad magic)");
  VvolHeader h;
  h.version = r.get<std::uint32_t>();
  if (h.version != kVvolVersion) r.fail("unsupported VVOL version " + std::to_string(h.version));
  for (auto& d : h.dims) d = r.get<std::uint32_t>();
  for (auto& s : h.spacing) s = r.get<float>();
  const auto dt = r.get<std::uint32_t>();
  if (dt > 1) r.fail("unknown dtype code " + std::to_string(dt));
  h.dtype = static_cast<DType>(dt);
  h.payload_bytes = r.get<std::uint64_t>();
  const std::uint64_t expect = std::uint64_t{h.dims[0]} * h.dims[1] * h.dims[2] *
                               (h.dtype == DType::F32 ? 4 : 1);
  if (h.payload_bytes != expect) {
    r.fail("payload length " + std::to_string(h.payload_bytes) + " does not match header " +
           h.describe());
  }
  return h;
}

}  // namespace

std::string VvolHeader::describe() const {
  std::ostringstream os;
  os << "VVOL v" << version << " dims " << dims[0] << "x" << dims[1] << "x" << dims[2]
     << " spacing " << spacing[0] << "," << spacing[1] << "," << spacing[2] << " dtype "
     << (dtype == DType::F32 ? "f32" : "u8") << " payload " << payload_bytes;
  return os.str();
}

void write_vvol(const fs::path& path, const Volume& v) {
  write_vvol(path, v, v.binary() ? DType::U8 : DType::F32);
}

void write_vvol(const fs::path& path, const Volume& v, DType dtype) {
  std::string out = "VVOL";
  put<std::uint32_t>(out, kVvolVersion);
  for (auto d : v.dims) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (auto s : v.spacing) put<float>(out, static_cast<float>(s));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype));
  const std::uint64_t bytes = v.size() * (dtype == DType::F32 ? 4 : 1);
  put<std::uint64_t>(out, bytes);
  out.reserve(out.size() + bytes);
  if (dtype == DType::F32) {
    for (double x : v.data) put<float>(out, static_cast<float>(x));
  } else {
    for (double x : v.data) out.push_back(x != 0.0 ? '\1' : '\0');
  }
  write_bytes(path, out);
}

VvolHeader read_vvol_header(const fs::path& path) {
  Reader r(read_bytes(path), path);
  return parse_header(r);
}

Volume read_vvol(const fs::path& path) {
  Reader r(read_bytes(path), path);
  const VvolHeader h = parse_header(r);
  Volume v({h.dims[0], h.dims[1], h.dims[2]},
           {static_cast<double>(h.spacing[0]), static_cast<double>(h.spacing[1]),
            static_cast<double>(h.spacing[2])},
           h.dtype == DType::U8 ? VolumeKind::Mask : VolumeKind::Intensity);
  const char* p = r.raw(h.payload_bytes);
  if (h.dtype == DType::F32) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      float f;
      std::memcpy(&f, p + 4 * i, 4);
      v.data[i] = static_cast<double>(f);
    }
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (static_cast<unsigned char>(p[i]) > 1) r.fail("u8 payload is not binary");
      v.data[i] = p[i] ? 1.0 : 0.0;
    }
  }
  if (r.remaining() != 0) r.fail("trailing bytes after payload");
  return v;
}

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text); }
std::string read_text(const fs::path& path) { return read_bytes(path); }

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr)) {
    throw std::runtime_error("sha256 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_bytes(path)); }

ConfigMap parse_config(const std::string& text, const std::string& origin) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(no) + ": empty key");
    if (out.count(key)) {
      throw std::invalid_argument(origin + ":" + std::to_string(no) + ": duplicate key '" + key +
                                  "'");
    }
    out[key] = {value, no};
  }
  return out;
}

// ---- checkpoints ----------------------------------------------------------------------

namespace {

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

std::string get_string(Reader& r) {
  const auto n = r.get<std::uint32_t>();
  return r.get_bytes(n);
}

void put_doubles(std::string& out, std::span<const double> v) {
  put<std::uint64_t>(out, v.size());
  for (double x : v) put<double>(out, x);
}

void get_doubles(Reader& r, std::span<double> dst, const std::string& what) {
  const auto n = r.get<std::uint64_t>();
  if (n != dst.size()) {
    r.fail(what + ": stored " + std::to_string(n) + " values, network expects " +
           std::to_string(dst.size()));
  }
  for (double& x : dst) x = r.get<double>();
}

}  // namespace

void write_checkpoint(const fs::path& path, arch::Network& net, const loss::Adam* opt) {
  std::string out = "VCKPT";
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, net.spec().describe());
  const auto params = net.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_string(out, p.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) put<std::uint64_t>(out, d);
    put_doubles(out, p.tensor.data());
  }
  const auto bns = net.batchnorms();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bns.size()));
  for (const auto& b : bns) {
    put_string(out, b.name);
    put_doubles(out, b.params->running_mean);
    put_doubles(out, b.params->running_var);
    put<std::uint64_t>(out, b.params->batches_tracked);
  }
  put<std::uint8_t>(out, opt ? 1 : 0);
  if (opt) {
    put<std::uint64_t>(out, opt->t());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(opt->slots().size()));
    for (const auto& s : opt->slots()) {
      put_string(out, s.name);
      put_doubles(out, s.m);
      put_doubles(out, s.v);
    }
  }
  write_bytes(path, out);
}

arch::NetworkSpec read_checkpoint_spec(const fs::path& path) {
  Reader r(read_bytes(path), path);
  if (r.get_bytes(5) != "VCKPT") r.fail("not a VCKPT checkpoint (bad magic)");
  if (r.get<std::uint32_t>() != kCheckpointVersion) r.fail("unsupported checkpoint version");
  const std::string echo = get_string(r);
  try {
    return arch::NetworkSpec::parse(echo);
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
}

std::string read_checkpoint(const fs::path& path, arch::Network& net, loss::Adam* opt) {
  Reader r(read_bytes(path), path);
  if (r.get_bytes(5) != "VCKPT") r.fail("not a VCKPT checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version");
  std::string echo = get_string(r);
  auto params = net.parameters();
  const auto np = r.get<std::uint32_t>();
  if (np != params.size()) {
    r.fail("checkpoint for '" + echo + "' holds " + std::to_string(np) +
           " parameters, network '" + net.spec().describe() + "' has " +
           std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = get_string(r);
    if (name != p.name) r.fail("parameter '" + name + "' where '" + p.name + "' was expected");
    const auto rank = r.get<std::uint32_t>();
    Shape s(rank);
    for (auto& d : s) d = r.get<std::uint64_t>();
    if (s != p.tensor.shape()) {
      r.fail("parameter '" + name + "' has shape " + shape_str(s) + ", network expects " +
             shape_str(p.tensor.shape()));
    }
    get_doubles(r, p.tensor.mutable_data(), name);
  }
  auto bns = net.batchnorms();
  const auto nb = r.get<std::uint32_t>();
  if (nb != bns.size()) r.fail("batch-norm layer count mismatch");
  for (auto& b : bns) {
    const std::string name = get_string(r);
    if (name != b.name) r.fail("batch-norm '" + name + "' where '" + b.name + "' was expected");
    get_doubles(r, b.params->running_mean, name + ".running_mean");
    get_doubles(r, b.params->running_var, name + ".running_var");
    b.params->batches_tracked = r.get<std::uint64_t>();
  }
  const auto has_opt = r.get<std::uint8_t>();
  if (has_opt && opt) {
    opt->set_t(r.get<std::uint64_t>());
    const auto ns = r.get<std::uint32_t>();
    if (ns != opt->slots().size()) r.fail("optimizer slot count mismatch");
    for (auto& s : opt->slots()) {
      const std::string name = get_string(r);
      if (name != s.name) r.fail("optimizer slot '" + name + "' where '" + s.name + "' expected");
      get_doubles(r, s.m, name + ".m");
      get_doubles(r, s.v, name + ".v");
    }
  }
  return echo;
}

// ---- exports ----------------------------------------------------------------------------

void export_csv(const Volume& v, const fs::path& path) {
  std::string out = "x,y,z,value\n";
  char buf[32];
  for (std::size_t z = 0; z < v.nz(); ++z)
    for (std::size_t y = 0; y < v.ny(); ++y)
      for (std::size_t x = 0; x < v.nx(); ++x) {
        out += std::to_string(x) + ',' + std::to_string(y) + ',' + std::to_string(z) + ',';
        auto res = std::to_chars(buf, buf + sizeof buf, v.at(x, y, z));
        out.append(buf, res.ptr);
        out += '\n';
      }
  write_bytes(path, out);
}

Volume import_csv(const fs::path& path, std::array<double, 3> spacing) {
  const std::string text = read_bytes(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "x,y,z,value") {
    throw FormatError(path.string() + ": missing 'x,y,z,value' header");
  }
  struct Row {
    std::size_t x, y, z;
    double v;
  };
  std::vector<Row> rows;
  std::size_t mx = 0, my = 0, mz = 0, no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    Row r{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto field = [&](auto& dst) {
      auto res = std::from_chars(p, end, dst);
      if (res.ec != std::errc()) {
        throw FormatError(path.string() + ":" + std::to_string(no) + ": malformed row");
      }
      p = res.ptr;
      if (p < end && *p == ',') ++p;
    };
    field(r.x);
    field(r.y);
    field(r.z);
    field(r.v);
    mx = std::max(mx, r.x);
    my = std::max(my, r.y);
    mz = std::max(mz, r.z);
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError(path.string() + ": no voxel rows");
  Volume v({mx + 1, my + 1, mz + 1}, spacing, VolumeKind::Intensity);
  for (const auto& r : rows) v.at(r.x, r.y, r.z) = r.v;
  return v;
}

std::vector<fs::path> export_pgm_slices(const Volume& v, const fs::path& dir,
                                        const std::string& prefix) {
  fs::create_directories(dir);
  double lo = 0.0, hi = 1.0;
  if (!v.binary() && !v.data.empty()) {
    lo = *std::min_element(v.data.begin(), v.data.end());
    hi = *std::max_element(v.data.begin(), v.data.end());
  }
  std::vector<fs::path> out;
  for (std::size_t z = 0; z < v.nz(); ++z) {
    std::string bytes = "P5\n" + std::to_string(v.nx()) + " " + std::to_string(v.ny()) + "\n255\n";
    for (std::size_t y = 0; y < v.ny(); ++y)
      for (std::size_t x = 0; x < v.nx(); ++x) {
        const double val = v.at(x, y, z);
        unsigned char g;
        if (v.binary()) {
          g = val != 0.0 ? 255 : 0;
        } else {
          const double t = hi > lo ? (val - lo) / (hi - lo) : 0.0;
          g = static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
        }
        bytes.push_back(static_cast<char>(g));
      }
    char name[64];
    std::snprintf(name, sizeof name, "_z%03zu.pgm", z);
    out.push_back(dir / (prefix + name));
    write_bytes(out.back(), bytes);
  }
  return out;
}

// ---- run manifest -------------------------------------------------------------------

std::vector<ManifestFile> hash_files(const std::vector<fs::path>& files, const fs::path& root) {
  std::vector<ManifestFile> out;
  const fs::path base = fs::weakly_canonical(root);
  for (const auto& f : files) {
    const fs::path full = fs::weakly_canonical(f);
    auto rel = full.lexically_relative(base);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    out.push_back({(inside ? rel : full).generic_string(), sha256_file(f)});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

fs::path write_manifest(const fs::path& dir, const RunManifest& m) {
  nlohmann::ordered_json j;
  auto files = [](const std::vector<ManifestFile>& v) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& f : v) arr.push_back({{"path", f.path}, {"sha256", f.sha256}});
    return arr;
  };
  j["tool"] = "vskel";
  j["version"] = kToolVersion;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = files(m.inputs);
  j["outputs"] = files(m.outputs);
  const fs::path path = dir / "manifest.json";
  write_text(path, j.dump(2) + "\n");
  return path;
}

}  // namespace vskel::io
