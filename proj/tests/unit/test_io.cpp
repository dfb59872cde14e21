#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "vskel/graph.hpp"
#include "vskel/io.hpp"
#include "vskel/random.hpp"
#include "vskel/synthgen.hpp"

using namespace vskel;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "vskel_io_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("VVOL round trip") {
  Volume f({7, 5, 3}, {0.83, 0.83, 5.0}, VolumeKind::Intensity);
  auto r = oracle::random_vector(f.size(), 1, -2.0, 2.0);
  for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = double(float(r[i]));
  io::write_vvol(scratch("f.vvol"), f);
  auto g = io::read_vvol(scratch("f.vvol"));
  CHECK(g.dims == f.dims);
  // spacing is stored as f32
  CHECK(g.spacing == std::array<double, 3>{double(0.83f), double(0.83f), 5.0});
  CHECK(g.data == f.data);
  CHECK(io::read_vvol_header(scratch("f.vvol")).dtype == io::DType::F32);

  Volume m({7, 5, 3}, kDefaultSpacing, VolumeKind::Mask);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = r[i] > 0;
  io::write_vvol(scratch("m.vvol"), m);
  CHECK(io::read_vvol_header(scratch("m.vvol")).dtype == io::DType::U8);
  CHECK(io::read_vvol(scratch("m.vvol")).data == m.data);
  CHECK(fs::file_size(scratch("m.vvol")) < fs::file_size(scratch("f.vvol")));

  io::write_text(scratch("bad.vvol"), "VVOX garbage");
  CHECK_THROWS_AS(io::read_vvol(scratch("bad.vvol")), io::FormatError);
  std::string bytes = io::read_text(scratch("f.vvol"));
  io::write_text(scratch("short.vvol"), bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(io::read_vvol(scratch("short.vvol")), io::FormatError);
}

TEST_CASE("SWC round trip is exact") {
  auto c = synth::generate_phantom(synth::PhantomParams{}, {64, 64, 16}, kDefaultSpacing, 3);
  const std::string text = to_swc(c.graph);
  auto back = from_swc(text);
  CHECK(to_swc(back) == text);
  REQUIRE(back.nodes.size() == c.graph.nodes.size());
  REQUIRE(back.edges.size() == c.graph.edges.size());
  for (std::size_t i = 0; i < back.edges.size(); ++i) {
    CHECK(back.edges[i].a == c.graph.edges[i].a);
    CHECK(back.edges[i].b == c.graph.edges[i].b);
    CHECK(back.edges[i].polyline == c.graph.edges[i].polyline);
    CHECK(back.edges[i].length_um == c.graph.edges[i].length_um);
  }
  CHECK_THROWS(from_swc("1 1 0 0 zero 1 -1\n"));
}

TEST_CASE("config parsing") {
  auto cfg = io::parse_config("# comment\nepochs = 3\n\nloss=wbce  # trailing\n");
  CHECK(cfg.at("epochs").value == "3");
  CHECK(cfg.at("loss").value == "wbce");
  CHECK(cfg.at("loss").line == 4);
  CHECK_THROWS_WITH(io::parse_config("a=1\na=2\n", "x.cfg"), doctest::Contains("duplicate"));
  CHECK_THROWS_WITH(io::parse_config("just words\n", "x.cfg"), doctest::Contains("x.cfg:1"));
}

TEST_CASE("checkpoint round trip") {
  arch::NetworkSpec spec;
  spec.kind = arch::Kind::U2D_CLSTM_S;
  spec.channels = {4, 8};
  spec.clstm_filters = 3;
  arch::Network a(spec);
  loss::Adam opt(a.parameters());
  for (auto& bn : a.batchnorms()) {
    bn.params->running_mean.assign(bn.params->running_mean.size(), 0.25);
    bn.params->batches_tracked = 1;
  }
  io::write_checkpoint(scratch("a.vckpt"), a, &opt);

  spec.seed = 99;
  arch::Network b(spec);
  const std::string echo = io::read_checkpoint(scratch("a.vckpt"), b);
  CHECK(echo == a.spec().describe());
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::vector<double>(pa[i].tensor.data().begin(), pa[i].tensor.data().end()) ==
          std::vector<double>(pb[i].tensor.data().begin(), pb[i].tensor.data().end()));
  }
  for (auto& bn : b.batchnorms()) CHECK(bn.params->running_mean.front() == 0.25);

  spec.channels = {4, 8, 16};
  arch::Network c(spec);
  CHECK_THROWS_AS(io::read_checkpoint(scratch("a.vckpt"), c), io::FormatError);
}

TEST_CASE("CSV and PGM export") {
  Volume v({3, 2, 2}, kDefaultSpacing, VolumeKind::Intensity);
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = 0.1 * double(i);
  io::export_csv(v, scratch("v.csv"));
  CHECK(io::read_text(scratch("v.csv")).rfind("x,y,z,value\n", 0) == 0);
  CHECK(io::import_csv(scratch("v.csv")).data == v.data);
  auto files = io::export_pgm_slices(v, scratch("pgm"), "v");
  CHECK(files.size() == 2);
  CHECK(io::read_text(files[0]).rfind("P5\n3 2\n255\n", 0) == 0);
}

TEST_CASE("sha256") {
  CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
