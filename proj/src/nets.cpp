#include "lhmaploc/nets.hpp"

#include "lhmaploc/error.hpp"
#include "lhmaploc/mapstore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lhm {

using nn::Tensor;
using nn::Var;

namespace {

constexpr float kLeak = 0.1f;

template <class T>
Var<T> lrelu(const Var<T>& x) {
  return nn::leaky_relu<T>(x, T(kLeak));
}

// He-normal initialization for leaky-ReLU layers.
template <class T>
Conv2d<T> make_conv(int cin, int cout, int stride, std::mt19937_64& rng, double gain = 1.0) {
  const double std_dev = gain * std::sqrt(2.0 / (1.0 + kLeak * kLeak) / (cin * 9.0));
  std::normal_distribution<double> dist(0.0, std_dev);
  Tensor<T> w(cout, cin, 3, 3);
  for (auto& v : w.data) v = T(dist(rng));
  return {nn::parameter(std::move(w)), nn::parameter(Tensor<T>(1, cout)), stride, 1};
}

template <class T>
Dense<T> make_dense(int in, int out, std::mt19937_64& rng, double gain = 1.0) {
  const double std_dev = gain * std::sqrt(2.0 / in);
  std::normal_distribution<double> dist(0.0, std_dev);
  Tensor<T> w(out, in);
  for (auto& v : w.data) v = T(dist(rng));
  return {nn::parameter(std::move(w)), nn::parameter(Tensor<T>(1, out))};
}

template <class U, class T>
Var<U> cast_var(const Var<T>& v) {
  if (!v) return nullptr;
  Tensor<U> out(v->value.n, v->value.c, v->value.h, v->value.w);
  std::transform(v->value.data.begin(), v->value.data.end(), out.data.begin(),
                 [](T x) { return U(x); });
  return nn::parameter(std::move(out));
}

template <class U, class T>
Conv2d<U> cast_conv(const Conv2d<T>& c) {
  return {cast_var<U>(c.weight), cast_var<U>(c.bias), c.stride, c.pad};
}

template <class U, class T>
Dense<U> cast_dense(const Dense<T>& d) {
  return {cast_var<U>(d.weight), cast_var<U>(d.bias)};
}

}  // namespace

void NetConfig::validate() const {
  if (channels.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 pyramid levels");
  if (heat_channels < 1 || corr_radius < 0 || mlp_hidden < 1 || depth_range <= 0)
    throw Error(ErrorCode::kInvalidArgument, "invalid network configuration");
  if (embed_level < 0 || embed_level >= levels())
    throw Error(ErrorCode::kInvalidArgument, "embedding level outside the pyramid");
}

std::uint64_t NetConfig::hash() const {
  // FNV-1a over the architecture fields.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  mix(channels.size());
  for (int c : channels) mix(static_cast<std::uint64_t>(c));
  mix(static_cast<std::uint64_t>(heat_channels));
  mix(static_cast<std::uint64_t>(corr_radius));
  mix(static_cast<std::uint64_t>(mlp_hidden));
  mix(static_cast<std::uint64_t>(embed_level));
  std::uint64_t bits;
  std::memcpy(&bits, &depth_range, sizeof bits);
  mix(bits);
  return h;
}

template <class T>
FeaturePyramid<T> Encoder<T>::operator()(const Var<T>& x) const {
  FeaturePyramid<T> out;
  Var<T> cur = x;
  for (std::size_t l = 0; l < down.size(); ++l) {
    cur = lrelu<T>(refine[l](lrelu<T>(down[l](cur))));
    out.levels.push_back(cur);
  }
  return out;
}

template <class T>
FlowEmbedding<T> FlowModule<T>::operator()(const FeaturePyramid<T>& a,
                                           const FeaturePyramid<T>& b) const {
  if (a.levels.size() != b.levels.size() || a.levels.size() != first.size()) {
    throw Error(ErrorCode::kShape, "flow embedding: pyramids have different depths");
  }
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    if (!a.levels[l]->value.same_shape(b.levels[l]->value)) {
      throw Error(ErrorCode::kShape, "flow embedding: level " + std::to_string(l) + " shapes " +
                                         a.levels[l]->value.shape_str() + " vs " +
                                         b.levels[l]->value.shape_str());
    }
  }
  FlowEmbedding<T> out;
  const int top = static_cast<int>(a.levels.size()) - 1;
  Var<T> feat, flow;
  for (int l = top; l >= embed_level; --l) {
    const auto& fa = a.levels[l];
    const auto& fb = b.levels[l];
    const auto& v = fa->value;
    Var<T> cost;
    std::vector<Var<T>> inputs;
    if (l == top) {
      cost = nn::correlation<T>(fa, fb, radius);
      inputs = {lrelu<T>(cost), fa};
    } else {
      Var<T> up_flow = nn::scale<T>(nn::resize_bilinear<T>(flow, v.h, v.w), T(2));
      Var<T> up_feat = nn::resize_bilinear<T>(feat, v.h, v.w);
      cost = nn::correlation<T>(fa, nn::warp<T>(fb, up_flow), radius);
      inputs = {lrelu<T>(cost), fa, up_flow, up_feat, nn::coordinate_channels<T>(v.n, v.h, v.w)};
    }
    feat = lrelu<T>(second[l](lrelu<T>(first[l](nn::concat_channels<T>(inputs)))));
    if (l > embed_level) {
      flow = flow_out[l](feat);
      out.flows.push_back(flow);
    } else {
      out.cost = cost;
    }
  }
  out.embedding = embed_out(feat);
  return out;
}

template <class T>
Var<T> HeatHead<T>::operator()(const FeaturePyramid<T>& f) const {
  const auto& x = f.levels.front();
  const auto& v = x->value;
  Var<T> in = nn::concat_channels<T>({x, nn::coordinate_channels<T>(v.n, v.h, v.w)});
  return nn::softplus<T>(second(lrelu<T>(first(in))));
}

template <class T>
PoseOutput<T> PoseHead<T>::operator()(const Var<T>& embedding, const Var<T>& heat) const {
  const auto& e = embedding->value;
  const auto& h = heat->value;
  if (e.c != h.c || e.n != h.n) {
    throw Error(ErrorCode::kShape, "attention head: embedding " + e.shape_str() +
                                       " does not match heat " + h.shape_str());
  }
  Var<T> up = (e.h == h.h && e.w == h.w) ? embedding : nn::resize_bilinear<T>(embedding, h.h, h.w);
  PoseOutput<T> out;
  out.pooled = nn::attention_pool<T>(up, heat);
  out.q = nn::normalize_rows<T>(q3(nn::relu<T>(q2(nn::relu<T>(q1(out.pooled))))));
  out.t = t3(nn::relu<T>(t2(nn::relu<T>(t1(out.pooled)))));
  return out;
}

template <class T>
PoseNet<T>::PoseNet(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int levels = cfg.levels();
  auto make_encoder = [&](int cin) {
    Encoder<T> enc;
    for (int l = 0; l < levels; ++l) {
      const int cout = cfg.channels[l];
      enc.down.push_back(make_conv<T>(cin, cout, 2, rng));
      enc.refine.push_back(make_conv<T>(cout, cout, 1, rng));
      cin = cout;
    }
    return enc;
  };
  image_enc_ = make_encoder(3);
  depth_enc_ = make_encoder(1);

  const int cost_ch = (2 * cfg.corr_radius + 1) * (2 * cfg.corr_radius + 1);
  constexpr int kHidden1 = 64, kHidden2 = 32;
  flow_.radius = cfg.corr_radius;
  flow_.embed_level = cfg.embed_level;
  flow_.first.resize(levels);
  flow_.second.resize(levels);
  flow_.flow_out.resize(levels);
  for (int l = levels - 1; l >= cfg.embed_level; --l) {
    int cin = cost_ch + cfg.channels[l];
    if (l < levels - 1) cin += 2 + kHidden2 + 2;  // flow, upsampled features, coordinates
    flow_.first[l] = make_conv<T>(cin, kHidden1, 1, rng);
    flow_.second[l] = make_conv<T>(kHidden1, kHidden2, 1, rng);
    if (l > cfg.embed_level) flow_.flow_out[l] = make_conv<T>(kHidden2, 2, 1, rng, 0.1);
  }
  flow_.embed_out = make_conv<T>(kHidden2, cfg.heat_channels, 1, rng);

  heat_.first = make_conv<T>(cfg.channels[0] + 2, 16, 1, rng);
  heat_.second = make_conv<T>(16, cfg.heat_channels, 1, rng);

  const int c = cfg.heat_channels, hid = cfg.mlp_hidden;
  pose_.q1 = make_dense<T>(c, hid, rng);
  pose_.q2 = make_dense<T>(hid, hid, rng);
  pose_.q3 = make_dense<T>(hid, 4, rng, 0.1);
  pose_.q3.bias->value.data[0] = T(1);  // start near the identity rotation
  pose_.t1 = make_dense<T>(c, hid, rng);
  pose_.t2 = make_dense<T>(hid, hid, rng);
  pose_.t3 = make_dense<T>(hid, 3, rng, 0.1);
}

template <class T>
std::vector<std::pair<std::string, Var<T>>> PoseNet<T>::parameters() const {
  std::vector<std::pair<std::string, Var<T>>> out;
  auto conv = [&out](const std::string& name, const Conv2d<T>& c) {
    if (!c.weight) return;
    out.emplace_back(name + ".w", c.weight);
    out.emplace_back(name + ".b", c.bias);
  };
  auto dense = [&out](const std::string& name, const Dense<T>& d) {
    out.emplace_back(name + ".w", d.weight);
    out.emplace_back(name + ".b", d.bias);
  };
  for (const auto* enc : {&image_enc_, &depth_enc_}) {
    const std::string prefix = enc == &image_enc_ ? "image" : "depth";
    for (std::size_t l = 0; l < enc->down.size(); ++l) {
      conv(prefix + ".down" + std::to_string(l), enc->down[l]);
      conv(prefix + ".refine" + std::to_string(l), enc->refine[l]);
    }
  }
  for (std::size_t l = 0; l < flow_.first.size(); ++l) {
    conv("flow.first" + std::to_string(l), flow_.first[l]);
    conv("flow.second" + std::to_string(l), flow_.second[l]);
    conv("flow.out" + std::to_string(l), flow_.flow_out[l]);
  }
  conv("flow.embed", flow_.embed_out);
  conv("heat.first", heat_.first);
  conv("heat.second", heat_.second);
  dense("pose.q1", pose_.q1);
  dense("pose.q2", pose_.q2);
  dense("pose.q3", pose_.q3);
  dense("pose.t1", pose_.t1);
  dense("pose.t2", pose_.t2);
  dense("pose.t3", pose_.t3);
  return out;
}

template <class T>
std::size_t PoseNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : parameters()) n += p->value.size();
  return n;
}

template <class T>
template <class U>
PoseNet<U> PoseNet<T>::cast() const {
  PoseNet<U> out;
  out.cfg_ = cfg_;
  auto enc = [](const Encoder<T>& e) {
    Encoder<U> r;
    for (const auto& c : e.down) r.down.push_back(cast_conv<U>(c));
    for (const auto& c : e.refine) r.refine.push_back(cast_conv<U>(c));
    return r;
  };
  out.image_enc_ = enc(image_enc_);
  out.depth_enc_ = enc(depth_enc_);
  out.flow_.radius = flow_.radius;
  out.flow_.embed_level = flow_.embed_level;
  for (const auto& c : flow_.first) out.flow_.first.push_back(cast_conv<U>(c));
  for (const auto& c : flow_.second) out.flow_.second.push_back(cast_conv<U>(c));
  for (const auto& c : flow_.flow_out) out.flow_.flow_out.push_back(cast_conv<U>(c));
  out.flow_.embed_out = cast_conv<U>(flow_.embed_out);
  out.heat_.first = cast_conv<U>(heat_.first);
  out.heat_.second = cast_conv<U>(heat_.second);
  out.pose_.q1 = cast_dense<U>(pose_.q1);
  out.pose_.q2 = cast_dense<U>(pose_.q2);
  out.pose_.q3 = cast_dense<U>(pose_.q3);
  out.pose_.t1 = cast_dense<U>(pose_.t1);
  out.pose_.t2 = cast_dense<U>(pose_.t2);
  out.pose_.t3 = cast_dense<U>(pose_.t3);
  return out;
}

template <class T>
Tensor<T> PoseNet<T>::image_tensor(const std::vector<const RgbImage*>& images) const {
  if (images.empty()) throw Error(ErrorCode::kShape, "empty image batch");
  const int h = images.front()->h, w = images.front()->w;
  const int m = cfg_.stride_multiple();
  if (h % m != 0 || w % m != 0 || h == 0 || w == 0) {
    throw Error(ErrorCode::kShape, "image " + std::to_string(h) + "x" + std::to_string(w) +
                                       " is not divisible by " + std::to_string(m));
  }
  Tensor<T> x(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = *images[n];
    if (img.h != h || img.w != w) throw Error(ErrorCode::kShape, "mixed image sizes in batch");
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int c = 0; c < 3; ++c)
          x.at(static_cast<int>(n), c, y, xx) =
              T(2) * (T(img.rgb[(static_cast<std::size_t>(y) * w + xx) * 3 + c]) - T(0.5));
  }
  return x;
}

template <class T>
Tensor<T> PoseNet<T>::depth_tensor(const std::vector<const DepthImage*>& depths) const {
  if (depths.empty()) throw Error(ErrorCode::kShape, "empty depth batch");
  const int h = depths.front()->h, w = depths.front()->w;
  const int m = cfg_.stride_multiple();
  if (h % m != 0 || w % m != 0 || h == 0 || w == 0) {
    throw Error(ErrorCode::kShape, "depth " + std::to_string(h) + "x" + std::to_string(w) +
                                       " is not divisible by " + std::to_string(m));
  }
  Tensor<T> x(static_cast<int>(depths.size()), 1, h, w);
  const T inv = T(1.0 / cfg_.depth_range);
  for (std::size_t n = 0; n < depths.size(); ++n) {
    const auto& d = *depths[n];
    if (d.h != h || d.w != w) throw Error(ErrorCode::kShape, "mixed depth sizes in batch");
    T* dst = x.image(static_cast<int>(n));
    for (std::size_t i = 0; i < d.values.size(); ++i)
      dst[i] = std::clamp(T(d.values[i]) * inv, T(0), T(1));
  }
  return x;
}

template <class T>
FeaturePyramid<T> PoseNet<T>::encode_image(const std::vector<const RgbImage*>& images) const {
  return image_enc_(nn::constant(image_tensor(images)));
}

template <class T>
FeaturePyramid<T> PoseNet<T>::encode_depth(const std::vector<const DepthImage*>& depths) const {
  return depth_enc_(nn::constant(depth_tensor(depths)));
}

template class PoseNet<float>;
template class PoseNet<double>;
template PoseNet<double> PoseNet<float>::cast<double>() const;
template PoseNet<float> PoseNet<double>::cast<float>() const;
template PoseNet<float> PoseNet<float>::cast<float>() const;

// ---------------------------------------------------------------------------
// Checkpoints: "LHCK", version u32, config, w_x, w_q, level, then every
// parameter as (name length u32, name, 4 × i32 shape, f32 data).

namespace {
constexpr char kCkptMagic[4] = {'L', 'H', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

template <class V>
void put(std::vector<std::uint8_t>& buf, V v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(V));
}

template <class V>
V get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(V) > bytes.size()) throw Error(ErrorCode::kTruncated, "checkpoint truncated");
  V v;
  std::memcpy(&v, bytes.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<std::uint8_t> buf;
  for (char c : kCkptMagic) put(buf, c);
  put(buf, kCkptVersion);
  const auto& cfg = ckpt.net.config();
  put(buf, cfg.hash());
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.channels.size()));
  for (int c : cfg.channels) put<std::int32_t>(buf, c);
  put<std::int32_t>(buf, cfg.heat_channels);
  put<std::int32_t>(buf, cfg.corr_radius);
  put<std::int32_t>(buf, cfg.mlp_hidden);
  put<std::int32_t>(buf, cfg.embed_level);
  put(buf, cfg.depth_range);
  put(buf, ckpt.w_x);
  put(buf, ckpt.w_q);
  put<std::int32_t>(buf, ckpt.noise_level);
  const auto params = ckpt.net.parameters();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    for (int d : {p->value.n, p->value.c, p->value.h, p->value.w}) put<std::int32_t>(buf, d);
    for (float v : p->value.data) put(buf, v);
  }
  write_file(path, buf);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::span<const std::uint8_t> b(bytes);
  std::size_t pos = 0;
  for (char c : kCkptMagic) {
    if (get<char>(b, pos) != c) throw Error(ErrorCode::kBadMagic, "not a checkpoint: " + path.string());
  }
  if (get<std::uint32_t>(b, pos) != kCkptVersion)
    throw Error(ErrorCode::kBadVersion, "unsupported checkpoint version");
  const auto stored_hash = get<std::uint64_t>(b, pos);
  NetConfig cfg;
  cfg.channels.resize(get<std::uint32_t>(b, pos));
  for (int& c : cfg.channels) c = get<std::int32_t>(b, pos);
  cfg.heat_channels = get<std::int32_t>(b, pos);
  cfg.corr_radius = get<std::int32_t>(b, pos);
  cfg.mlp_hidden = get<std::int32_t>(b, pos);
  cfg.embed_level = get<std::int32_t>(b, pos);
  cfg.depth_range = get<double>(b, pos);
  if (cfg.hash() != stored_hash)
    throw Error(ErrorCode::kParse, "checkpoint config hash mismatch in " + path.string());
  Checkpoint ckpt;
  ckpt.w_x = get<double>(b, pos);
  ckpt.w_q = get<double>(b, pos);
  ckpt.noise_level = get<std::int32_t>(b, pos);
  ckpt.net = PoseNet<float>(cfg, 0);
  const auto params = ckpt.net.parameters();
  if (get<std::uint32_t>(b, pos) != params.size())
    throw Error(ErrorCode::kParse, "checkpoint parameter count mismatch");
  for (const auto& [name, p] : params) {
    const auto len = get<std::uint32_t>(b, pos);
    if (pos + len > b.size()) throw Error(ErrorCode::kTruncated, "checkpoint truncated");
    std::string stored(reinterpret_cast<const char*>(b.data() + pos), len);
    pos += len;
    if (stored != name) throw Error(ErrorCode::kParse, "checkpoint parameter " + stored + " != " + name);
    for (int d : {p->value.n, p->value.c, p->value.h, p->value.w}) {
      if (get<std::int32_t>(b, pos) != d)
        throw Error(ErrorCode::kShape, "checkpoint shape mismatch for " + name);
    }
    for (float& v : p->value.data) v = get<float>(b, pos);
  }
  if (pos != b.size()) throw Error(ErrorCode::kParse, "trailing bytes in checkpoint");
  return ckpt;
}

}  // namespace lhm
