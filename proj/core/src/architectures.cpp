#include "vskel/architectures.hpp"

#include <array>
#include <charconv>
#include <sstream>

#include "vskel/random.hpp"

namespace vskel::arch {

namespace {

struct KindInfo {
  Kind kind;
  std::string_view name;
  std::string_view label;
};

constexpr std::array<KindInfo, 5> kKinds{{
    {Kind::U2D, "U2D", "U-2D"},
    {Kind::U2D_CLSTM_D, "U2D_CLSTM_D", "U-2D+CLSTM (D)"},
    {Kind::U2D_CLSTM_S, "U2D_CLSTM_S", "U-2D+CLSTM (S)"},
    {Kind::U3D, "U3D", "U-3D"},
    {Kind::CLSTM_D, "CLSTM_D", "CLSTM"},
}};

const KindInfo& info(Kind k) {
  for (const auto& i : kKinds)
    if (i.kind == k) return i;
  throw std::invalid_argument("unknown network kind");
}

}  // namespace

std::string_view kind_name(Kind k) { return info(k).name; }
std::string_view kind_label(Kind k) { return info(k).label; }

Kind parse_kind(std::string_view token) {
  for (const auto& i : kKinds)
    if (i.name == token) return i.kind;
  std::string accepted;
  for (const auto& i : kKinds) accepted += (accepted.empty() ? "" : ", ") + std::string(i.name);
  throw std::invalid_argument("unknown network kind '" + std::string(token) +
                              "' (accepted: " + accepted + ")");
}

std::vector<Kind> all_kinds() {
  std::vector<Kind> out;
  for (const auto& i : kKinds) out.push_back(i.kind);
  return out;
}

bool has_cnn(Kind k) { return k != Kind::CLSTM_D; }
bool has_head(Kind k) {
  return k == Kind::U2D_CLSTM_S || k == Kind::U2D_CLSTM_D || k == Kind::CLSTM_D;
}

std::size_t NetworkSpec::filters() const {
  if (clstm_filters) return clstm_filters;
  return kind == Kind::U2D_CLSTM_S ? kShallowFilters : kDeepFilters;
}

std::size_t NetworkSpec::divisor() const {
  std::size_t d = 1;
  if (has_cnn(kind)) d = std::size_t{1} << (channels.size() - 1);
  if (kind == Kind::U2D_CLSTM_D || kind == Kind::CLSTM_D) d = std::max<std::size_t>(d, 2);
  return d;
}

std::string NetworkSpec::describe() const {
  std::ostringstream os;
  os << kind_name(kind) << " channels=";
  for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
  if (has_head(kind)) os << " filters=" << filters() << (bidirectional ? " bi" : " uni");
  char alpha[32];
  auto res = std::to_chars(alpha, alpha + sizeof alpha, leaky_alpha);
  os << " alpha=" << std::string_view(alpha, res.ptr - alpha) << " seed=" << seed;
  return os.str();
}

NetworkSpec NetworkSpec::parse(std::string_view text) {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("network spec '" + std::string(text) + "': " + why);
  };
  std::istringstream is{std::string(text)};
  std::string tok;
  if (!(is >> tok)) fail("empty");
  NetworkSpec s;
  s.kind = parse_kind(tok);
  s.channels.clear();
  auto number = [&](std::string_view v, auto& out) {
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) fail("bad number '" + std::string(v) + "'");
  };
  while (is >> tok) {
    const auto eq = tok.find('=');
    const std::string key = tok.substr(0, eq);
    const std::string_view val = eq == std::string::npos ? std::string_view() : std::string_view(tok).substr(eq + 1);
    if (tok == "bi" || tok == "uni") {
      s.bidirectional = tok == "bi";
    } else if (key == "channels") {
      std::size_t start = 0;
      while (start <= val.size()) {
        const auto comma = std::min(val.find(',', start), val.size());
        std::size_t c = 0;
        number(val.substr(start, comma - start), c);
        s.channels.push_back(c);
        start = comma + 1;
      }
    } else if (key == "filters") {
      number(val, s.clstm_filters);
    } else if (key == "alpha") {
      number(val, s.leaky_alpha);
    } else if (key == "seed") {
      number(val, s.seed);
    } else {
      fail("unknown field '" + tok + "'");
    }
  }
  if (s.channels.empty()) fail("missing channels");
  return s;
}

// ---- building blocks -----------------------------------------------------------

namespace {

struct ConvBlock {
  nn::ConvParams conv;
  nn::BatchNormParams bn;
};

struct DoubleConv {
  ConvBlock a, b;
};

ConvBlock make_block(std::size_t in, std::size_t out, int dims, Rng& rng) {
  return {nn::make_conv(in, out, 3, dims, rng), nn::BatchNormParams::make(out)};
}

DoubleConv make_double(std::size_t in, std::size_t out, int dims, Rng& rng) {
  DoubleConv d;
  d.a = make_block(in, out, dims, rng);
  d.b = make_block(out, out, dims, rng);
  return d;
}

struct UNet {
  int dims = 2;
  double alpha = nn::kLeakySlope;
  std::vector<DoubleConv> down;    // U1, levels 0..L-2
  std::array<DoubleConv, 2> bottom;  // U0 at the coarsest level
  std::vector<DoubleConv> up;      // U2, index = level
  nn::ConvParams final;

  Tensor block(const Tensor& x, ConvBlock& c, nn::Mode mode) const {
    Tensor y = dims == 2 ? nn::conv2d(x, c.conv) : nn::conv3d(x, c.conv);
    return nn::leaky_relu(nn::batchnorm(y, c.bn, mode), alpha);
  }
  Tensor pair(const Tensor& x, DoubleConv& d, nn::Mode mode) const {
    return block(block(x, d.a, mode), d.b, mode);
  }

  Tensor forward(const Tensor& x, nn::Mode mode) {
    std::vector<Tensor> skips;
    Tensor h = x;
    for (auto& d : down) {
      h = pair(h, d, mode);
      skips.push_back(h);
      h = nn::maxpool(h, 2, dims);
    }
    for (auto& d : bottom) h = pair(h, d, mode);
    for (std::size_t l = up.size(); l-- > 0;) {
      h = nn::upsample(h, 2, dims);
      h = pair(concat({h, skips[l]}, 1), up[l], mode);
    }
    Tensor logits = dims == 2 ? nn::conv2d(h, final) : nn::conv3d(h, final);
    return nn::sigmoid(logits);
  }
};

UNet make_unet(const std::vector<std::size_t>& c, int dims, double alpha, Rng& rng) {
  if (c.size() < 2) throw std::invalid_argument("U-Net needs at least two channel levels");
  UNet u;
  u.dims = dims;
  u.alpha = alpha;
  const std::size_t levels = c.size();
  std::size_t in = 1;
  for (std::size_t l = 0; l + 1 < levels; ++l) {
    u.down.push_back(make_double(in, c[l], dims, rng));
    in = c[l];
  }
  u.bottom[0] = make_double(c[levels - 2], c[levels - 1], dims, rng);
  u.bottom[1] = make_double(c[levels - 1], c[levels - 1], dims, rng);
  u.up.resize(levels - 1);
  for (std::size_t l = levels - 1; l-- > 0;) {
    u.up[l] = make_double(c[l + 1] + c[l], c[l], dims, rng);
  }
  u.final = nn::make_conv(c[0], 1, 1, dims, rng);
  return u;
}

void collect(const std::string& prefix, const nn::ConvParams& p, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".kernel", p.kernel});
  out.push_back({prefix + ".bias", p.bias});
}

void collect(const std::string& prefix, const ConvBlock& b, std::vector<NamedTensor>& out) {
  collect(prefix + ".conv", b.conv, out);
  out.push_back({prefix + ".bn.gamma", b.bn.gamma});
  out.push_back({prefix + ".bn.beta", b.bn.beta});
}

void collect(const std::string& prefix, const DoubleConv& d, std::vector<NamedTensor>& out) {
  collect(prefix + ".a", d.a, out);
  collect(prefix + ".b", d.b, out);
}

void collect(const std::string& prefix, const UNet& u, std::vector<NamedTensor>& out) {
  for (std::size_t l = 0; l < u.down.size(); ++l)
    collect(prefix + ".down" + std::to_string(l), u.down[l], out);
  for (std::size_t i = 0; i < 2; ++i) collect(prefix + ".bottom" + std::to_string(i), u.bottom[i], out);
  for (std::size_t l = 0; l < u.up.size(); ++l)
    collect(prefix + ".up" + std::to_string(l), u.up[l], out);
  collect(prefix + ".final", u.final, out);
}

void collect_bn(const std::string& prefix, DoubleConv& d, std::vector<NamedBatchNorm>& out) {
  out.push_back({prefix + ".a.bn", &d.a.bn});
  out.push_back({prefix + ".b.bn", &d.b.bn});
}

void collect_bn(const std::string& prefix, UNet& u, std::vector<NamedBatchNorm>& out) {
  for (std::size_t l = 0; l < u.down.size(); ++l)
    collect_bn(prefix + ".down" + std::to_string(l), u.down[l], out);
  for (std::size_t i = 0; i < 2; ++i)
    collect_bn(prefix + ".bottom" + std::to_string(i), u.bottom[i], out);
  for (std::size_t l = 0; l < u.up.size(); ++l)
    collect_bn(prefix + ".up" + std::to_string(l), u.up[l], out);
}

void collect(const std::string& prefix, const nn::BiConvLstmWeights& w,
             std::vector<NamedTensor>& out) {
  collect(prefix + ".fwd.gates", w.forward.gates, out);
  if (w.backward) collect(prefix + ".bwd.gates", w.backward->gates, out);
  collect(prefix + ".compress", w.compress, out);
}

// Slices a [N, 1, D, H, W] tensor into D tensors of [N, 1, H, W].
std::vector<Tensor> to_sequence(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor flat = reshape(x, {s[0], s[2], s[3], s[4]});
  std::vector<Tensor> seq;
  seq.reserve(s[2]);
  for (std::size_t t = 0; t < s[2]; ++t) seq.push_back(slice(flat, 1, t, t + 1));
  return seq;
}

Tensor from_sequence(std::span<const Tensor> seq) {
  Tensor stacked = concat(seq, 1);
  const Shape& s = stacked.shape();
  return reshape(stacked, {s[0], 1, s[1], s[2], s[3]});
}

}  // namespace

struct Network::Impl {
  std::optional<UNet> cnn;
  std::vector<nn::BiConvLstmWeights> units;  // 1 (shallow) or 6 (deep)
};

Network::Network(NetworkSpec spec) : spec_(std::move(spec)), impl_(std::make_unique<Impl>()) {
  if (!(spec_.leaky_alpha > 0.0 && spec_.leaky_alpha < 1.0)) {
    throw std::invalid_argument("leaky_alpha must lie in (0,1)");
  }
  Rng rng = stream(spec_.seed, "init");
  if (has_cnn(spec_.kind)) {
    const int dims = spec_.kind == Kind::U3D ? 3 : 2;
    impl_->cnn = make_unet(spec_.channels, dims, spec_.leaky_alpha, rng);
  }
  const std::size_t f = spec_.filters();
  const bool bi = spec_.bidirectional;
  if (spec_.kind == Kind::U2D_CLSTM_S) {
    impl_->units.push_back(nn::BiConvLstmWeights::make(1, f, 1, bi, rng));
  } else if (spec_.kind == Kind::U2D_CLSTM_D || spec_.kind == Kind::CLSTM_D) {
    for (std::size_t u = 0; u < 6; ++u) {
      // the fifth unit also receives the second unit's output as a skip
      const std::size_t in = u == 4 ? 2 : 1;
      impl_->units.push_back(nn::BiConvLstmWeights::make(in, f, 1, bi, rng));
    }
  }
}

Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

Tensor Network::cnn_forward(const Tensor& x, nn::Mode mode) {
  if (!impl_->cnn) throw std::logic_error(std::string(kind_name(spec_.kind)) + " has no CNN part");
  const Shape& s = x.shape();
  if (s.size() != 5 || s[1] != 1) {
    throw TensorError("network input must be [N, 1, D, H, W], got " + shape_str(s));
  }
  const std::size_t div = std::size_t{1} << (spec_.channels.size() - 1);
  const bool three_d = spec_.kind == Kind::U3D;
  for (std::size_t a = three_d ? 2 : 3; a < 5; ++a) {
    if (s[a] % div) {
      throw TensorError("input " + shape_str(s) + " not divisible by " + std::to_string(div) +
                        " along pooled axes; pad the volume first");
    }
  }
  if (three_d) return impl_->cnn->forward(x, mode);
  Tensor slices = reshape(x, {s[0] * s[2], 1, s[3], s[4]});
  return reshape(impl_->cnn->forward(slices, mode), s);
}

Tensor Network::head_forward(const Tensor& seq_in, nn::Mode) {
  if (impl_->units.empty()) {
    throw std::logic_error(std::string(kind_name(spec_.kind)) + " has no ConvLSTM head");
  }
  const Shape& s = seq_in.shape();
  if (s.size() != 5 || s[1] != 1) {
    throw TensorError("sequence input must be [N, 1, D, H, W], got " + shape_str(s));
  }
  if (s[2] < 1) throw TensorError("sequence needs at least one slice");
  auto seq = to_sequence(seq_in);
  std::vector<Tensor> out;
  auto& units = impl_->units;
  if (units.size() == 1) {
    out = nn::bidirectional_convlstm(seq, units[0]);
  } else {
    if (s[3] % 2 || s[4] % 2) {
      throw TensorError("deep ConvLSTM head needs even slice extents, got " + shape_str(s));
    }
    auto a = nn::bidirectional_convlstm(seq, units[0]);
    auto skip = nn::bidirectional_convlstm(a, units[1]);
    std::vector<Tensor> pooled;
    for (const auto& t : skip) pooled.push_back(nn::maxpool(t, 2, 2));
    auto b = nn::bidirectional_convlstm(pooled, units[2]);
    b = nn::bidirectional_convlstm(b, units[3]);
    std::vector<Tensor> merged;
    for (std::size_t t = 0; t < b.size(); ++t) {
      merged.push_back(concat({nn::upsample(b[t], 2, 2), skip[t]}, 1));
    }
    auto c = nn::bidirectional_convlstm(merged, units[4]);
    out = nn::bidirectional_convlstm(c, units[5]);
  }
  for (auto& t : out) t = nn::sigmoid(t);
  return from_sequence(out);
}

ForwardResult Network::forward_detailed(const Tensor& x, nn::Mode mode) {
  ForwardResult r;
  switch (spec_.kind) {
    case Kind::U2D:
    case Kind::U3D:
      r.output = cnn_forward(x, mode);
      break;
    case Kind::CLSTM_D:
      r.output = head_forward(x, mode);
      break;
    case Kind::U2D_CLSTM_S:
    case Kind::U2D_CLSTM_D:
      r.intermediate = cnn_forward(x, mode);
      r.output = head_forward(r.intermediate, mode);
      break;
  }
  return r;
}

Tensor Network::forward(const Tensor& x, nn::Mode mode) { return forward_detailed(x, mode).output; }

std::vector<NamedTensor> Network::cnn_parameters() const {
  std::vector<NamedTensor> out;
  if (impl_->cnn) collect("cnn", *impl_->cnn, out);
  return out;
}

std::vector<NamedTensor> Network::head_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t u = 0; u < impl_->units.size(); ++u)
    collect("clstm" + std::to_string(u), impl_->units[u], out);
  return out;
}

std::vector<NamedTensor> Network::parameters() const {
  auto out = cnn_parameters();
  auto head = head_parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

std::vector<NamedBatchNorm> Network::batchnorms() {
  std::vector<NamedBatchNorm> out;
  if (impl_->cnn) collect_bn("cnn", *impl_->cnn, out);
  return out;
}

std::size_t Network::count_parameters() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

std::size_t count_parameters(const NetworkSpec& spec) { return Network(spec).count_parameters(); }

}  // namespace vskel::arch
