#include "ccomp/model.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include "ccomp/util.hpp"

namespace ccomp {

namespace {

constexpr float kNormEps = 1e-5f;
constexpr double kSigmaFloor = 1e-3;           // added to softplus(sigma_raw)
constexpr double kSigmaBiasInit = 0.5413248546129181;  // softplus -> 1.0

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

struct BlockRef {
  std::string prefix;
  int width;
};

std::vector<BlockRef> list_blocks(const ModelConfig& cfg, const std::string& branch) {
  std::vector<BlockRef> out;
  const int n = cfg.stages;
  if (branch == "enc") {
    for (int i = n; i >= 1; --i)
      for (int j = 0; j < cfg.blocks_per_stage; ++j)
        out.push_back({"enc.stage" + std::to_string(i) + ".block" + std::to_string(j),
                       cfg.feat_channels[static_cast<size_t>(i - 1)]});
  } else if (branch == "pz") {
    for (int i = 1; i <= n; ++i)
      for (int j = 0; j < cfg.blocks_per_stage; ++j)
        out.push_back({"pz.stage" + std::to_string(i) + ".block" + std::to_string(j),
                       cfg.ctx_width});
  } else if (cfg.variant == Variant::kParallel) {
    for (int i = 1; i <= n; ++i)
      for (int j = 0; j < cfg.blocks_per_stage; ++j)
        out.push_back({"dec.stage" + std::to_string(i) + ".block" + std::to_string(j),
                       cfg.feat_channels[static_cast<size_t>(i - 1)]});
  } else {
    for (int j = 0; j < n * cfg.blocks_per_stage; ++j)
      out.push_back({"dec.block" + std::to_string(j), cfg.seq_dec_width});
  }
  return out;
}

std::string cond_head_name(const std::string& block_prefix) {
  const size_t dot = block_prefix.find('.');
  return block_prefix.substr(0, dot) + ".cond." + block_prefix.substr(dot + 1);
}

// ---- backends --------------------------------------------------------------
// The forward pass is written once against this interface; the eager backend
// runs it for inference (encode/decode), the graph backend records the same
// pass onto the autodiff tape for training.

template <typename T>
struct EagerBackend {
  using H = Tensor<T>;
  const ParamStore<T>& ps;

  const Tensor<T>& pv(const std::string& n) const { return ps.at(n).value; }

  H input(Tensor<T> t) { return t; }
  H conv(const H& x, const std::string& name, const ConvSpec& cs) {
    return conv2d_forward(x, pv(name + ".w"), pv(name + ".b"), cs);
  }
  H linear(const H& x, const std::string& name) {
    return linear_forward(x, pv(name + ".w"), pv(name + ".b"));
  }
  H add(const H& a, const H& b) {
    H y = a;
    for (int64_t i = 0; i < y.size(); ++i) y.v[i] += b.v[i];
    return y;
  }
  H gelu(const H& x) { return gelu_forward(x); }
  H softplus_add(const H& x, T c) { return softplus_forward(x, c); }
  H channel_norm(const H& x) { return channel_norm_forward(x, T(kNormEps)); }
  H affine(const H& x, const H& sc, const H& sh) {
    return affine_modulate_forward(x, sc, sh);
  }
  H upsample2x(const H& x) { return upsample_nearest2x_forward(x); }
  H depth_to_space(const H& x, int r) { return depth_to_space_forward(x, r); }
  H broadcast_param(const std::string& n, int b, int h, int w) {
    const Tensor<T>& bias = pv(n);
    const int c = bias.dims[0];
    Tensor<T> y({b, h, w, c});
    for (int64_t p = 0; p < y.size() / c; ++p)
      std::copy(bias.v.begin(), bias.v.end(), y.v.begin() + p * c);
    return y;
  }
  H concat(const std::vector<const H*>& xs) { return concat_channels(xs); }
  H slice_last(const H& x, int c0, int c1) {
    const int c = x.dims.back();
    Shape os = x.dims;
    os.back() = c1 - c0;
    Tensor<T> y(os);
    const int cw = c1 - c0;
    for (int64_t p = 0; p < x.size() / c; ++p)
      std::copy(x.v.begin() + p * c + c0, x.v.begin() + p * c + c1, y.v.begin() + p * cw);
    return y;
  }
  const Tensor<T>& value(const H& x) const { return x; }
};

template <typename T>
struct GraphBackend {
  using H = int;
  Graph<T>& g;
  ParamStore<T>& ps;
  std::unordered_map<std::string, int> leafs;

  int pnode(const std::string& n) {
    auto it = leafs.find(n);
    if (it != leafs.end()) return it->second;
    const int id = g.param(ps.at(n));
    leafs.emplace(n, id);
    return id;
  }

  H input(Tensor<T> t) { return g.input(std::move(t)); }
  H conv(H x, const std::string& name, const ConvSpec& cs) {
    return g.conv2d(x, pnode(name + ".w"), pnode(name + ".b"), cs);
  }
  H linear(H x, const std::string& name) {
    return g.linear(x, pnode(name + ".w"), pnode(name + ".b"));
  }
  H add(H a, H b) { return g.add(a, b); }
  H gelu(H x) { return g.gelu(x); }
  H softplus_add(H x, T c) { return g.softplus_add(x, c); }
  H channel_norm(H x) { return g.channel_norm(x, T(kNormEps)); }
  H affine(H x, H sc, H sh) { return g.affine_modulate(x, sc, sh); }
  H upsample2x(H x) { return g.upsample_nearest2x(x); }
  H depth_to_space(H x, int r) { return g.depth_to_space(x, r); }
  H broadcast_param(const std::string& n, int b, int h, int w) {
    return g.broadcast_nhwc(pnode(n), b, h, w);
  }
  H concat(const std::vector<const H*>& xs) {
    std::vector<int> ids;
    for (const H* x : xs) ids.push_back(*x);
    return g.concat_last(ids);
  }
  H slice_last(H x, int c0, int c1) { return g.slice_last(x, c0, c1); }
  const Tensor<T>& value(H x) const { return g.value(x); }
};

// ---- shared forward skeleton ------------------------------------------------

template <typename T, typename B>
struct ForwardPass {
  const ModelConfig& cfg;
  B& bk;
  using H = typename B::H;

  struct Cond {
    std::vector<H> scale, shift;
  };

  Cond branch_cond(const std::string& branch, const H& t) {
    Cond c;
    H hid = bk.gelu(bk.linear(t, branch + ".cond.trunk"));
    for (const BlockRef& b : list_blocks(cfg, branch)) {
      H ss = bk.linear(hid, cond_head_name(b.prefix));
      c.scale.push_back(bk.slice_last(ss, 0, b.width));
      c.shift.push_back(bk.slice_last(ss, b.width, 2 * b.width));
    }
    return c;
  }

  H block(const H& x, const BlockRef& ref, const H& scale, const H& shift) {
    ConvSpec dw{1, cfg.dw_kernel / 2, ref.width, /*replicate_pad=*/true};
    H d = bk.conv(x, ref.prefix + ".dw", dw);
    H n = bk.channel_norm(d);
    H a = bk.affine(n, scale, shift);
    H u = bk.conv(a, ref.prefix + ".pw1", ConvSpec{});
    H gg = bk.gelu(u);
    H v = bk.conv(gg, ref.prefix + ".pw2", ConvSpec{});
    return bk.add(x, v);
  }

  // h[i-1] = stage-i feature map, i = 1 (coarsest) .. N
  std::vector<H> enc_features(const H& x, Cond& cond) {
    const int n = cfg.stages;
    std::vector<H> h(static_cast<size_t>(n), H{});
    H t = bk.conv(x, "enc.stem", ConvSpec{4, 0, 1});
    int bi = 0;
    for (int i = n; i >= 1; --i) {
      if (i < n) t = bk.conv(t, "enc.down" + std::to_string(i), ConvSpec{2, 0, 1});
      for (int j = 0; j < cfg.blocks_per_stage; ++j, ++bi)
        t = block(t, list_blocks(cfg, "enc")[static_cast<size_t>(bi)], cond.scale[static_cast<size_t>(bi)],
                  cond.shift[static_cast<size_t>(bi)]);
      h[static_cast<size_t>(i - 1)] = t;
    }
    return h;
  }

  H ctx_input(int stage, const H* e_prev, int batch, int sh, int sw) {
    if (stage == 1) return bk.broadcast_param("pz.e0", batch, sh, sw);
    return bk.conv(bk.upsample2x(*e_prev), "pz.stage" + std::to_string(stage) + ".up",
                   ConvSpec{});
  }

  // pz context blocks + (mu, sigma) heads; identical on encode and decode
  void prior(int stage, const H& ctx_in, Cond& cond, H* ctx, H* mu, H* sigma) {
    const int l = cfg.latent_channels;
    H c = ctx_in;
    const auto blocks = list_blocks(cfg, "pz");
    const int base = (stage - 1) * cfg.blocks_per_stage;
    for (int j = 0; j < cfg.blocks_per_stage; ++j)
      c = block(c, blocks[static_cast<size_t>(base + j)], cond.scale[static_cast<size_t>(base + j)],
                cond.shift[static_cast<size_t>(base + j)]);
    H ms = bk.conv(c, "pz.stage" + std::to_string(stage) + ".prior", ConvSpec{});
    *ctx = c;
    *mu = bk.slice_last(ms, 0, l);
    *sigma = bk.softplus_add(bk.slice_last(ms, l, 2 * l), T(kSigmaFloor));
  }

  H posterior(int stage, const H& ctx, const H& h_i) {
    const std::string p = "enc.stage" + std::to_string(stage) + ".post";
    H u = bk.conv(bk.concat({&ctx, &h_i}), p + "1", ConvSpec{});
    return bk.conv(bk.gelu(u), p + "2", ConvSpec{});
  }

  H aggregate(int stage, const H& ctx_in, const H& zhat) {
    return bk.add(ctx_in,
                  bk.conv(zhat, "pz.stage" + std::to_string(stage) + ".proj", ConvSpec{}));
  }

  H dec_forward(const std::vector<H>& zhats, const std::vector<H>& es, Cond& cond) {
    const int n = cfg.stages;
    const auto blocks = list_blocks(cfg, "dec");
    H r{};
    if (cfg.variant == Variant::kParallel) {
      int bi = 0;
      for (int i = 1; i <= n; ++i) {
        H pieces_r;
        if (i == 1) {
          const auto& e1 = bk.value(es[0]);
          pieces_r = bk.broadcast_param("dec.r0", e1.dims[0], e1.dims[1], e1.dims[2]);
        } else {
          pieces_r = bk.conv(bk.upsample2x(r), "dec.stage" + std::to_string(i) + ".up",
                             ConvSpec{});
        }
        H f = bk.conv(bk.concat({&pieces_r, &zhats[static_cast<size_t>(i - 1)], &es[static_cast<size_t>(i - 1)]}),
                      "dec.stage" + std::to_string(i) + ".fuse", ConvSpec{});
        for (int j = 0; j < cfg.blocks_per_stage; ++j, ++bi)
          f = block(f, blocks[static_cast<size_t>(bi)], cond.scale[static_cast<size_t>(bi)],
                    cond.shift[static_cast<size_t>(bi)]);
        r = f;
      }
    } else {
      r = bk.conv(es.back(), "dec.fuse", ConvSpec{});
      for (size_t j = 0; j < blocks.size(); ++j)
        r = block(r, blocks[j], cond.scale[j], cond.shift[j]);
    }
    return bk.depth_to_space(bk.conv(r, "dec.tail", ConvSpec{}), 4);
  }
};

template <typename T>
Tensor<T> make_t_tensor(const ModelConfig& cfg, const std::vector<double>& lambdas) {
  Tensor<T> t({static_cast<int>(lambdas.size()), 1});
  const double lo = std::log(cfg.lambda_low), hi = std::log(cfg.lambda_high);
  for (size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0.0)) throw DomainError("lambda must be positive and finite");
    t.v[i] = static_cast<T>((std::log(lambdas[i]) - lo) / (hi - lo));
  }
  return t;
}

}  // namespace

// ---- ModelConfig ------------------------------------------------------------

std::string ModelConfig::serialize() const {
  std::ostringstream o;
  o << "stages=" << stages << "\n";
  o << "input=" << input_h << "x" << input_w << "x" << input_c << "\n";
  o << "latent_channels=" << latent_channels << "\n";
  o << "feat_channels=";
  for (size_t i = 0; i < feat_channels.size(); ++i) o << (i ? "," : "") << feat_channels[i];
  o << "\n";
  o << "blocks_per_stage=" << blocks_per_stage << "\n";
  o << "cond_width=" << cond_width << "\n";
  o << "ctx_width=" << ctx_width << "\n";
  o << "dw_kernel=" << dw_kernel << "\n";
  o << "variant=" << (variant == Variant::kParallel ? "parallel" : "sequential") << "\n";
  o << "lambda_low=" << fmt_double(lambda_low) << "\n";
  o << "lambda_high=" << fmt_double(lambda_high) << "\n";
  o << "seq_dec_width=" << seq_dec_width << "\n";
  o << "init_seed=" << init_seed << "\n";
  return o.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("model config: bad line: " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "stages") cfg.stages = std::stoi(val);
    else if (key == "input") {
      if (std::sscanf(val.c_str(), "%dx%dx%d", &cfg.input_h, &cfg.input_w, &cfg.input_c) != 3)
        throw ParseError("model config: bad input size: " + val);
    } else if (key == "latent_channels") cfg.latent_channels = std::stoi(val);
    else if (key == "feat_channels") {
      cfg.feat_channels.clear();
      std::istringstream vs(val);
      std::string tok;
      while (std::getline(vs, tok, ',')) cfg.feat_channels.push_back(std::stoi(tok));
    } else if (key == "blocks_per_stage") cfg.blocks_per_stage = std::stoi(val);
    else if (key == "cond_width") cfg.cond_width = std::stoi(val);
    else if (key == "ctx_width") cfg.ctx_width = std::stoi(val);
    else if (key == "dw_kernel") cfg.dw_kernel = std::stoi(val);
    else if (key == "variant")
      cfg.variant = (val == "sequential") ? Variant::kSequential : Variant::kParallel;
    else if (key == "lambda_low") cfg.lambda_low = std::stod(val);
    else if (key == "lambda_high") cfg.lambda_high = std::stod(val);
    else if (key == "seq_dec_width") cfg.seq_dec_width = std::stoi(val);
    else if (key == "init_seed") cfg.init_seed = std::stoull(val);
    // unknown keys are ignored so headers may carry extra annotations
  }
  if (cfg.stages < 1) throw ParseError("model config: stages must be >= 1");
  if (static_cast<int>(cfg.feat_channels.size()) != cfg.stages)
    throw ParseError("model config: feat_channels must list one width per stage");
  return cfg;
}

// ---- CodecModel -------------------------------------------------------------

template <typename T>
CodecModel<T>::CodecModel(const ModelConfig& cfg) : cfg_(cfg) {
  register_params();
  init_params();
  // lightweight entropy model is a build contract, not a tuning goal
  const double ratio = static_cast<double>(params_.group_values(Group::kPz)) /
                       static_cast<double>(params_.total_values());
  if (ratio > 0.25)
    throw ContractError("pz parameter group is " + std::to_string(ratio * 100.0) +
                        "% of the model; budget is 25%");
}

template <typename T>
const ScaleTable& CodecModel<T>::scale_table() const {
  static const ScaleTable table;
  return table;
}

template <typename T>
double CodecModel<T>::lambda_to_t(double lambda) const {
  if (!(lambda > 0.0)) throw DomainError("lambda must be positive and finite");
  return (std::log(lambda) - std::log(cfg_.lambda_low)) /
         (std::log(cfg_.lambda_high) - std::log(cfg_.lambda_low));
}

template <typename T>
void CodecModel<T>::register_params() {
  const ModelConfig& c = cfg_;
  const int n = c.stages, l = c.latent_channels, cw = c.ctx_width;

  auto reg_conv = [&](const std::string& name, Group g, int kh, int kw, int cing, int cout) {
    params_.add(name + ".w", g, Tensor<T>({kh, kw, cing, cout}));
    params_.add(name + ".b", g, Tensor<T>({cout}));
  };
  auto reg_linear = [&](const std::string& name, Group g, int fin, int fout) {
    params_.add(name + ".w", g, Tensor<T>({fin, fout}));
    params_.add(name + ".b", g, Tensor<T>({fout}));
  };
  auto reg_block = [&](const BlockRef& b, Group g) {
    reg_conv(b.prefix + ".dw", g, c.dw_kernel, c.dw_kernel, 1, b.width);
    reg_conv(b.prefix + ".pw1", g, 1, 1, b.width, 2 * b.width);
    reg_conv(b.prefix + ".pw2", g, 1, 1, 2 * b.width, b.width);
  };
  auto reg_cond = [&](const std::string& branch, Group g) {
    reg_linear(branch + ".cond.trunk", g, 1, c.cond_width);
    for (const BlockRef& b : list_blocks(c, branch))
      reg_linear(cond_head_name(b.prefix), g, c.cond_width, 2 * b.width);
  };

  // encoder
  reg_conv("enc.stem", Group::kEnc, 4, 4, c.input_c, c.feat_channels[static_cast<size_t>(n - 1)]);
  const auto enc_blocks = list_blocks(c, "enc");
  int bi = 0;
  for (int i = n; i >= 1; --i) {
    if (i < n)
      reg_conv("enc.down" + std::to_string(i), Group::kEnc, 2, 2,
               c.feat_channels[static_cast<size_t>(i)], c.feat_channels[static_cast<size_t>(i - 1)]);
    for (int j = 0; j < c.blocks_per_stage; ++j, ++bi)
      reg_block(enc_blocks[static_cast<size_t>(bi)], Group::kEnc);
  }
  for (int i = 1; i <= n; ++i) {
    const std::string p = "enc.stage" + std::to_string(i) + ".post";
    reg_conv(p + "1", Group::kEnc, 1, 1, cw + c.feat_channels[static_cast<size_t>(i - 1)], cw);
    reg_conv(p + "2", Group::kEnc, 1, 1, cw, l);
  }
  reg_cond("enc", Group::kEnc);

  // entropy branch
  params_.add("pz.e0", Group::kPz, Tensor<T>({cw}));
  const auto pz_blocks = list_blocks(c, "pz");
  bi = 0;
  for (int i = 1; i <= n; ++i) {
    if (i > 1) reg_conv("pz.stage" + std::to_string(i) + ".up", Group::kPz, 1, 1, cw, cw);
    for (int j = 0; j < c.blocks_per_stage; ++j, ++bi)
      reg_block(pz_blocks[static_cast<size_t>(bi)], Group::kPz);
    reg_conv("pz.stage" + std::to_string(i) + ".prior", Group::kPz, 1, 1, cw, 2 * l);
    reg_conv("pz.stage" + std::to_string(i) + ".proj", Group::kPz, 1, 1, l, cw);
  }
  reg_cond("pz", Group::kPz);

  // decoder branch
  const auto dec_blocks = list_blocks(c, "dec");
  if (c.variant == Variant::kParallel) {
    params_.add("dec.r0", Group::kDec, Tensor<T>({cw}));
    bi = 0;
    for (int i = 1; i <= n; ++i) {
      if (i > 1)
        reg_conv("dec.stage" + std::to_string(i) + ".up", Group::kDec, 1, 1,
                 c.feat_channels[static_cast<size_t>(i - 2)], cw);
      reg_conv("dec.stage" + std::to_string(i) + ".fuse", Group::kDec, 1, 1, 2 * cw + l,
               c.feat_channels[static_cast<size_t>(i - 1)]);
      for (int j = 0; j < c.blocks_per_stage; ++j, ++bi)
        reg_block(dec_blocks[static_cast<size_t>(bi)], Group::kDec);
    }
    reg_conv("dec.tail", Group::kDec, 1, 1, c.feat_channels[static_cast<size_t>(n - 1)],
             16 * c.input_c);
  } else {
    reg_conv("dec.fuse", Group::kDec, 1, 1, cw, c.seq_dec_width);
    for (const BlockRef& b : dec_blocks) reg_block(b, Group::kDec);
    reg_conv("dec.tail", Group::kDec, 1, 1, c.seq_dec_width, 16 * c.input_c);
  }
  reg_cond("dec", Group::kDec);
}

template <typename T>
void CodecModel<T>::init_params() {
  Rng rng(derive_seed(cfg_.init_seed, 0xC0DECULL));
  const int l = cfg_.latent_channels;
  for (size_t pi = 0; pi < params_.count(); ++pi) {
    Parameter<T>& p = params_[pi];
    const std::string& name = p.name;
    const bool is_weight = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;

    if (name == "pz.e0" || name == "dec.r0") {
      for (auto& v : p.value.v) v = static_cast<T>(0.02 * rng.normal());
      continue;
    }
    if (!is_weight) {
      p.value.fill(T(0));
      if (name.find(".prior.b") != std::string::npos)
        for (int k = l; k < 2 * l; ++k) p.value.v[static_cast<size_t>(k)] = static_cast<T>(kSigmaBiasInit);
      continue;
    }
    if (name.find(".cond.") != std::string::npos) {
      if (name.find(".trunk.") != std::string::npos)
        for (auto& v : p.value.v) v = static_cast<T>(rng.normal());
      else
        p.value.fill(T(0));  // heads start as identity modulation
      continue;
    }
    double std_dev;
    if (p.value.rank() == 4) {
      const int fan_in = p.value.dims[0] * p.value.dims[1] * p.value.dims[2];
      std_dev = std::sqrt(2.0 / fan_in);
      if (name.find(".prior.w") != std::string::npos) std_dev = 0.01;
      if (name.find(".post") != std::string::npos && name.find("2.w") != std::string::npos)
        std_dev = 0.02;
    } else {
      std_dev = std::sqrt(2.0 / p.value.dims[0]);
    }
    for (auto& v : p.value.v) v = static_cast<T>(std_dev * rng.normal());
  }
}

template <typename T>
std::vector<Tensor<T>> CodecModel<T>::encode_features(const Tensor<T>& x, double lambda) const {
  check_rank(x, 4, "encode_features");
  const int d1 = cfg_.divisor(1);
  if (x.dims[1] % d1 != 0 || x.dims[2] % d1 != 0)
    throw DimensionError("encode_features: input " + shape_str(x.dims) +
                         " not divisible by total downsampling factor " + std::to_string(d1));
  EagerBackend<T> bk{params_};
  ForwardPass<T, EagerBackend<T>> fw{cfg_, bk};
  auto cond = fw.branch_cond("enc", make_t_tensor<T>(cfg_, std::vector<double>(
                                        static_cast<size_t>(x.dims[0]), lambda)));
  return fw.enc_features(x, cond);
}

template <typename T>
ImageEncoding<T> CodecModel<T>::encode_pass(const Tensor<T>& x, double lambda) const {
  const ScaleTable& table = scale_table();
  EagerBackend<T> bk{params_};
  ForwardPass<T, EagerBackend<T>> fw{cfg_, bk};
  const auto tvec = make_t_tensor<T>(cfg_, std::vector<double>(static_cast<size_t>(x.dims[0]), lambda));
  auto enc_cond = fw.branch_cond("enc", tvec);
  auto pz_cond = fw.branch_cond("pz", tvec);
  auto dec_cond = fw.branch_cond("dec", tvec);

  const int d1 = cfg_.divisor(1);
  if (x.dims[1] % d1 != 0 || x.dims[2] % d1 != 0)
    throw DimensionError("encode_pass: input " + shape_str(x.dims) +
                         " not divisible by total downsampling factor " + std::to_string(d1));
  auto h = fw.enc_features(x, enc_cond);

  ImageEncoding<T> out;
  Tensor<T> e_prev;
  for (int i = 1; i <= cfg_.stages; ++i) {
    const int sh = x.dims[1] / cfg_.divisor(i), sw = x.dims[2] / cfg_.divisor(i);
    Tensor<T> ctx_in = fw.ctx_input(i, i == 1 ? nullptr : &e_prev, x.dims[0], sh, sw);
    Tensor<T> ctx, mu, sigma;
    fw.prior(i, ctx_in, pz_cond, &ctx, &mu, &sigma);
    Tensor<T> z = fw.posterior(i, ctx, h[static_cast<size_t>(i - 1)]);

    StageLatent<T> st;
    st.mu = mu;
    st.sigma = sigma;
    st.zhat = Tensor<T>(z.dims);
    std::vector<int> symbols(z.v.size()), indices(z.v.size());
    for (size_t k = 0; k < z.v.size(); ++k) {
      const T q = round_residual(z.v[k] - mu.v[k]);
      symbols[k] = static_cast<int>(q);
      indices[k] = table.sigma_to_index(static_cast<double>(sigma.v[k]));
      st.zhat.v[k] = mu.v[k] + q;
    }
    out.estimated_bits += estimate_bits(symbols, indices, table);
    e_prev = fw.aggregate(i, ctx_in, st.zhat);
    out.e.push_back(e_prev);
    out.symbols.push_back(std::move(symbols));
    out.indices.push_back(std::move(indices));
    out.stages.push_back(std::move(st));
  }

  std::vector<Tensor<T>> zhats, es;
  for (auto& st : out.stages) zhats.push_back(st.zhat);
  out.recon = fw.dec_forward(zhats, out.e, dec_cond);
  return out;
}

template <typename T>
DecodedImage<T> CodecModel<T>::decode_pass(const std::vector<std::vector<uint8_t>>& payloads,
                                           double lambda, int image_h, int image_w) const {
  if (static_cast<int>(payloads.size()) != cfg_.stages)
    throw ContractError("decode_pass: expected " + std::to_string(cfg_.stages) +
                        " stage payloads, got " + std::to_string(payloads.size()));
  const ScaleTable& table = scale_table();
  EagerBackend<T> bk{params_};
  ForwardPass<T, EagerBackend<T>> fw{cfg_, bk};
  const auto tvec = make_t_tensor<T>(cfg_, {lambda});
  auto pz_cond = fw.branch_cond("pz", tvec);
  auto dec_cond = fw.branch_cond("dec", tvec);

  DecodedImage<T> out;
  std::vector<Tensor<T>> es;
  Tensor<T> e_prev;
  for (int i = 1; i <= cfg_.stages; ++i) {
    const int sh = image_h / cfg_.divisor(i), sw = image_w / cfg_.divisor(i);
    Tensor<T> ctx_in = fw.ctx_input(i, i == 1 ? nullptr : &e_prev, 1, sh, sw);
    Tensor<T> ctx, mu, sigma;
    fw.prior(i, ctx_in, pz_cond, &ctx, &mu, &sigma);

    std::vector<int> indices(mu.v.size());
    for (size_t k = 0; k < mu.v.size(); ++k)
      indices[k] = table.sigma_to_index(static_cast<double>(sigma.v[k]));
    const std::vector<int> symbols =
        rans_decode(payloads[static_cast<size_t>(i - 1)], indices, static_cast<int>(mu.v.size()), table);

    Tensor<T> zhat(mu.dims);
    for (size_t k = 0; k < mu.v.size(); ++k)
      zhat.v[k] = mu.v[k] + static_cast<T>(symbols[k]);
    e_prev = fw.aggregate(i, ctx_in, zhat);
    es.push_back(e_prev);
    out.zhat.push_back(std::move(zhat));
  }
  out.recon = fw.dec_forward(out.zhat, es, dec_cond);
  out.e = std::move(es);
  return out;
}

template <typename T>
Tensor<T> CodecModel<T>::decoder_pass(const std::vector<Tensor<T>>& zhats,
                                      const std::vector<Tensor<T>>& es, double lambda) const {
  if (static_cast<int>(zhats.size()) != cfg_.stages || es.size() != zhats.size())
    throw ContractError("decoder_pass: stage count mismatch");
  EagerBackend<T> bk{params_};
  ForwardPass<T, EagerBackend<T>> fw{cfg_, bk};
  auto dec_cond = fw.branch_cond(
      "dec", make_t_tensor<T>(cfg_, std::vector<double>(static_cast<size_t>(zhats[0].dims[0]), lambda)));
  return fw.dec_forward(zhats, es, dec_cond);
}

template <typename T>
void CodecModel<T>::replay_latents(const Tensor<T>& x, const std::vector<double>& lambdas,
                                   std::vector<Tensor<T>>* zhats, std::vector<Tensor<T>>* es,
                                   Rng* noise_rng) const {
  EagerBackend<T> bk{params_};
  ForwardPass<T, EagerBackend<T>> fw{cfg_, bk};
  const auto tvec = make_t_tensor<T>(cfg_, lambdas);
  auto enc_cond = fw.branch_cond("enc", tvec);
  auto pz_cond = fw.branch_cond("pz", tvec);
  auto h = fw.enc_features(x, enc_cond);

  zhats->clear();
  es->clear();
  Tensor<T> e_prev;
  for (int i = 1; i <= cfg_.stages; ++i) {
    const int sh = x.dims[1] / cfg_.divisor(i), sw = x.dims[2] / cfg_.divisor(i);
    Tensor<T> ctx_in = fw.ctx_input(i, i == 1 ? nullptr : &e_prev, x.dims[0], sh, sw);
    Tensor<T> ctx, mu, sigma;
    fw.prior(i, ctx_in, pz_cond, &ctx, &mu, &sigma);
    Tensor<T> z = fw.posterior(i, ctx, h[static_cast<size_t>(i - 1)]);
    Tensor<T> zhat(z.dims);
    if (noise_rng) {
      for (size_t k = 0; k < z.v.size(); ++k)
        zhat.v[k] = z.v[k] + static_cast<T>(noise_rng->uniform() - 0.5);
    } else {
      for (size_t k = 0; k < z.v.size(); ++k)
        zhat.v[k] = mu.v[k] + round_residual(z.v[k] - mu.v[k]);
    }
    e_prev = fw.aggregate(i, ctx_in, zhat);
    es->push_back(e_prev);
    zhats->push_back(std::move(zhat));
  }
}

template <typename T>
TrainForward CodecModel<T>::build_train_forward(Graph<T>& g, const Tensor<T>& x,
                                                const std::vector<double>& lambdas,
                                                Rng& noise_rng) {
  if (static_cast<size_t>(x.dims[0]) != lambdas.size())
    throw ContractError("build_train_forward: one lambda per batch item required");
  GraphBackend<T> bk{g, params_, {}};
  ForwardPass<T, GraphBackend<T>> fw{cfg_, bk};
  const auto tvec = make_t_tensor<T>(cfg_, lambdas);
  int t = g.input(tvec);
  auto enc_cond = fw.branch_cond("enc", t);
  auto pz_cond = fw.branch_cond("pz", t);
  auto dec_cond = fw.branch_cond("dec", t);

  const int xid = g.input(x);
  auto h = fw.enc_features(xid, enc_cond);

  TrainForward out;
  std::vector<int> zhats, es;
  int e_prev = -1;
  for (int i = 1; i <= cfg_.stages; ++i) {
    const int sh = x.dims[1] / cfg_.divisor(i), sw = x.dims[2] / cfg_.divisor(i);
    int ctx_in = fw.ctx_input(i, i == 1 ? nullptr : &e_prev, x.dims[0], sh, sw);
    int ctx, mu, sigma;
    fw.prior(i, ctx_in, pz_cond, &ctx, &mu, &sigma);
    int z = fw.posterior(i, ctx, h[static_cast<size_t>(i - 1)]);

    Tensor<T> noise(g.value(z).dims);
    for (auto& u : noise.v) u = static_cast<T>(noise_rng.uniform() - 0.5);
    int zhat = g.add_const_tensor(z, std::move(noise));

    int bits = g.gaussian_bits(g.sub(zhat, mu), sigma);
    out.stage_bits_item.push_back(g.sum_per_item(bits));
    out.bits_item = (i == 1) ? out.stage_bits_item.back()
                             : g.add(out.bits_item, out.stage_bits_item.back());

    e_prev = fw.aggregate(i, ctx_in, zhat);
    es.push_back(e_prev);
    zhats.push_back(zhat);
  }
  out.xhat = fw.dec_forward(zhats, es, dec_cond);
  out.sqerr_item = g.sum_per_item(g.square(g.sub(out.xhat, xid)));
  return out;
}

template <typename T>
TrainForward CodecModel<T>::build_dec_forward(Graph<T>& g, const std::vector<Tensor<T>>& zhats,
                                              const std::vector<Tensor<T>>& es,
                                              const std::vector<double>& lambdas) {
  GraphBackend<T> bk{g, params_, {}};
  ForwardPass<T, GraphBackend<T>> fw{cfg_, bk};
  auto dec_cond = fw.branch_cond("dec", g.input(make_t_tensor<T>(cfg_, lambdas)));
  std::vector<int> zh, eh;
  for (const auto& z : zhats) zh.push_back(g.input(z));
  for (const auto& e : es) eh.push_back(g.input(e));
  TrainForward out;
  out.xhat = fw.dec_forward(zh, eh, dec_cond);
  return out;
}

template <typename T>
std::array<uint8_t, 32> CodecModel<T>::pz_fingerprint() const {
  ByteWriter w;
  for (size_t i = 0; i < params_.count(); ++i) {
    const Parameter<T>& p = params_[i];
    if (p.group != Group::kPz) continue;
    w.u16(static_cast<uint16_t>(p.name.size()));
    w.str(p.name);
    w.u8(static_cast<uint8_t>(p.value.rank()));
    for (int d : p.value.dims) w.u32(static_cast<uint32_t>(d));
    for (const T v : p.value.v) w.f32(static_cast<float>(v));
  }
  const auto table_bytes = scale_table().serialize();
  w.raw(table_bytes.data(), table_bytes.size());
  return sha256(w.bytes.data(), w.bytes.size());
}

template <typename T>
void CodecModel<T>::load_values(const LoadedCheckpoint& ck) {
  if (ck.params.size() != params_.count())
    throw ContractError("checkpoint has " + std::to_string(ck.params.size()) +
                        " parameters, model expects " + std::to_string(params_.count()));
  for (const auto& [name, group, dims, values] : ck.params) {
    Parameter<T>& p = params_.at(name);
    if (p.group != group)
      throw ContractError("checkpoint group mismatch for " + name);
    if (p.value.dims != dims)
      throw ContractError("checkpoint shape mismatch for " + name + ": " + shape_str(dims) +
                          " vs " + shape_str(p.value.dims));
    for (size_t i = 0; i < values.size(); ++i) p.value.v[i] = static_cast<T>(values[i]);
  }
}

template <typename T>
Tensor<T> quantize_residual(const Tensor<T>& z, const Tensor<T>& mu, bool noise_mode, Rng& rng) {
  if (!z.same_shape(mu))
    throw DimensionError("quantize_residual: z " + shape_str(z.dims) + " vs mu " +
                         shape_str(mu.dims));
  Tensor<T> out(z.dims);
  if (noise_mode) {
    for (size_t i = 0; i < z.v.size(); ++i)
      out.v[i] = z.v[i] + static_cast<T>(rng.uniform() - 0.5);
  } else {
    for (size_t i = 0; i < z.v.size(); ++i)
      out.v[i] = mu.v[i] + round_residual(z.v[i] - mu.v[i]);
  }
  return out;
}

template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& items) {
  if (items.empty()) throw ContractError("stack_batch: empty batch");
  Shape s = items[0]->dims;
  s[0] = static_cast<int>(items.size());
  Tensor<T> out(s);
  const int64_t per = items[0]->size();
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i]->dims != items[0]->dims)
      throw DimensionError("stack_batch: mismatched item shapes");
    std::copy(items[i]->v.begin(), items[i]->v.end(), out.v.begin() + static_cast<int64_t>(i) * per);
  }
  return out;
}

template <typename T>
CodecModel<T> model_from_checkpoint(const LoadedCheckpoint& ck) {
  CodecModel<T> m(ModelConfig::parse(ck.header));
  m.load_values(ck);
  return m;
}

CodecModel<float> load_model(const std::string& path) {
  return model_from_checkpoint<float>(parse_checkpoint(read_file(path)));
}

template class CodecModel<float>;
template class CodecModel<double>;
template Tensor<float> quantize_residual<float>(const Tensor<float>&, const Tensor<float>&, bool,
                                                Rng&);
template Tensor<double> quantize_residual<double>(const Tensor<double>&, const Tensor<double>&,
                                                  bool, Rng&);
template Tensor<float> stack_batch<float>(const std::vector<const Tensor<float>*>&);
template Tensor<double> stack_batch<double>(const std::vector<const Tensor<double>*>&);
template CodecModel<float> model_from_checkpoint<float>(const LoadedCheckpoint&);
template CodecModel<double> model_from_checkpoint<double>(const LoadedCheckpoint&);

}  // namespace ccomp
