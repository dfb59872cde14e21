#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vskel/architectures.hpp"
#include "vskel/losses.hpp"
#include "vskel/volume.hpp"

namespace vskel::io {

namespace fs = std::filesystem;

/// Raised for malformed or mismatched files; the message names the path.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- VVOL ------------------------------------------------------------------------
//
// Little-endian: "VVOL", u32 version, u32 dims[3] (x, y, z), f32 spacing[3],
// u32 dtype (0 = f32, 1 = u8 binary), u64 payload bytes, then the payload in
// z-major / y / x-fastest order.

inline constexpr std::uint32_t kVvolVersion = 1;
enum class DType : std::uint32_t { F32 = 0, U8 = 1 };

struct VvolHeader {
  std::uint32_t version = kVvolVersion;
  std::array<std::uint32_t, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{0, 0, 0};
  DType dtype = DType::F32;
  std::uint64_t payload_bytes = 0;

  std::string describe() const;
};

/// Binary volumes (mask/skeleton) are written as u8, intensities as f32.
void write_vvol(const fs::path& path, const Volume& v);
void write_vvol(const fs::path& path, const Volume& v, DType dtype);
Volume read_vvol(const fs::path& path);
VvolHeader read_vvol_header(const fs::path& path);

// ---- text and hashing -----------------------------------------------------------

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);

// ---- key=value configuration --------------------------------------------------------

struct ConfigEntry {
  std::string value;
  std::size_t line = 0;  // 0 for command-line overrides
};
using ConfigMap = std::map<std::string, ConfigEntry>;

/// Flat "key = value" lines; '#' starts a comment; blank lines ignored.
ConfigMap parse_config(const std::string& text, const std::string& origin = "<config>");

// ---- checkpoints -------------------------------------------------------------------
//
// "VCKPT", u32 version, spec echo, named f64 parameter blobs with shapes,
// batch-norm running statistics, optional Adam moments.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const fs::path& path, arch::Network& net, const loss::Adam* opt = nullptr);
/// Loads parameters and batch-norm statistics into `net` (names and shapes
/// must match). Returns the spec echo stored in the file.
std::string read_checkpoint(const fs::path& path, arch::Network& net, loss::Adam* opt = nullptr);
/// The network spec a checkpoint was written for.
arch::NetworkSpec read_checkpoint_spec(const fs::path& path);

// ---- exports ------------------------------------------------------------------------

/// "x,y,z,value" header then one line per voxel, values in shortest
/// round-trip form.
void export_csv(const Volume& v, const fs::path& path);
Volume import_csv(const fs::path& path, std::array<double, 3> spacing = kDefaultSpacing);

/// One binary PGM per z-slice (<prefix>_z<k>.pgm). Binary volumes map to
/// 0/255; intensities are scaled linearly from their min..max.
std::vector<fs::path> export_pgm_slices(const Volume& v, const fs::path& dir,
                                        const std::string& prefix);

// ---- run manifest -------------------------------------------------------------------

inline constexpr const char* kToolVersion = "0.1.0";

struct ManifestFile {
  std::string path;  // relative to the manifest's directory when inside it
  std::string sha256;
};

struct RunManifest {
  std::string command;
  std::string config;  // canonical key=value echo
  std::uint64_t seed = 0;
  std::vector<ManifestFile> inputs;
  std::vector<ManifestFile> outputs;
};

/// Hashes every file in `files` and records it; paths under `root` are
/// stored relative to it.
std::vector<ManifestFile> hash_files(const std::vector<fs::path>& files, const fs::path& root);

/// Writes <dir>/manifest.json (keys sorted, no timestamps, so equal runs give
/// equal bytes).
fs::path write_manifest(const fs::path& dir, const RunManifest& m);

}  // namespace vskel::io
