#include "pcc/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace pcc {
namespace {

constexpr char kMagic[4] = {'P', 'C', 'C', 'M'};
constexpr uint16_t kVersion = 1;
constexpr size_t kKernel = 5;

// ---------------- parameter layout ----------------

struct Declarer {
  std::vector<Param>* out;
  size_t cursor = 0;

  // Returns the weight index; the bias lands at index + 1.
  size_t fc(const std::string& name, size_t in, size_t n) {
    push(name + ".w", {in, n}, false);
    push(name + ".b", {n}, true);
    return cursor - 2;
  }
  size_t conv(const std::string& name, size_t cin, size_t cout) {
    push(name + ".k", {kKernel * kKernel * cin, cout}, false);
    push(name + ".b", {cout}, true);
    return cursor - 2;
  }
  void push(const std::string& name, std::vector<size_t> shape, bool is_bias) {
    if (out) {
      Param p;
      p.name = name;
      p.shape = std::move(shape);
      p.is_bias = is_bias;
      p.value = std::make_shared<std::vector<double>>(p.size());
      out->push_back(std::move(p));
    }
    ++cursor;
  }
};

void validate_spec(const ModelSpec& s) {
  auto positive = [](const std::vector<size_t>& v) {
    for (size_t w : v)
      if (w == 0) return false;
    return true;
  };
  if (s.n_z == 0 || s.n_u == 0 || s.img_h == 0 || s.img_w == 0 || s.frames == 0)
    throw ConfigError("model spec: dimensions must be positive");
  if (!positive(s.enc_hidden) || !positive(s.dec_hidden) || !positive(s.dyn_hidden))
    throw ConfigError("model spec: layer widths must be positive");
  if (s.back_nz == 0 || s.back_nu == 0 || s.back_nx == 0 || s.back_joint == 0)
    throw ConfigError("model spec: backward branch widths must be positive");
  if (s.backbone == BackboneKind::conv) {
    if (s.img_h % 8 != 0 || s.img_w % 8 != 0)
      throw ConfigError("model spec: conv backbone needs image dims divisible by 8");
    if (s.dec_hidden.empty() || s.dec_hidden.back() != (s.img_h / 8) * (s.img_w / 8))
      throw ConfigError("model spec: last decoder fc width must equal (h/8)*(w/8)");
    if (s.conv1_channels == 0) throw ConfigError("model spec: conv1_channels must be positive");
  }
}

// Single source of truth for parameter order. With `out` set it also
// allocates the buffers.
ParamLayout make_layout(const ModelSpec& s, std::vector<Param>* out) {
  validate_spec(s);
  Declarer d{out};
  ParamLayout lay;

  if (s.backbone == BackboneKind::mlp) {
    size_t prev = s.obs_dim();
    for (size_t i = 0; i < s.enc_hidden.size(); ++i) {
      lay.enc.push_back(d.fc("enc.fc" + std::to_string(i), prev, s.enc_hidden[i]));
      prev = s.enc_hidden[i];
    }
    lay.enc.push_back(d.fc("enc.head", prev, 2 * s.n_z));
  } else {
    ConvGeom g1{s.img_h, s.img_w, s.frames, s.conv1_channels, kKernel, 1};
    ConvGeom g2{g1.out_h(), g1.out_w(), s.conv1_channels, 32, kKernel, 2};
    ConvGeom g3{g2.out_h(), g2.out_w(), 32, 32, kKernel, 2};
    ConvGeom g4{g3.out_h(), g3.out_w(), 32, 10, kKernel, 2};
    lay.enc.push_back(d.conv("enc.conv0", g1.cin, g1.cout));
    lay.enc.push_back(d.conv("enc.conv1", g2.cin, g2.cout));
    lay.enc.push_back(d.conv("enc.conv2", g3.cin, g3.cout));
    lay.enc.push_back(d.conv("enc.conv3", g4.cin, g4.cout));
    size_t prev = g4.out_h() * g4.out_w() * g4.cout;
    for (size_t i = 0; i < s.enc_hidden.size(); ++i) {
      lay.enc.push_back(d.fc("enc.fc" + std::to_string(i), prev, s.enc_hidden[i]));
      prev = s.enc_hidden[i];
    }
    lay.enc.push_back(d.fc("enc.head", prev, 2 * s.n_z));
  }

  if (s.backbone == BackboneKind::mlp) {
    size_t prev = s.n_z;
    for (size_t i = 0; i < s.dec_hidden.size(); ++i) {
      lay.dec.push_back(d.fc("dec.fc" + std::to_string(i), prev, s.dec_hidden[i]));
      prev = s.dec_hidden[i];
    }
    lay.dec.push_back(d.fc("dec.head", prev, s.obs_dim()));
  } else {
    size_t prev = s.n_z;
    for (size_t i = 0; i < s.dec_hidden.size(); ++i) {
      lay.dec.push_back(d.fc("dec.fc" + std::to_string(i), prev, s.dec_hidden[i]));
      prev = s.dec_hidden[i];
    }
    lay.dec.push_back(d.conv("dec.conv0", 1, 32));
    lay.dec.push_back(d.conv("dec.conv1", 32, 32));
    lay.dec.push_back(d.conv("dec.conv2", 32, 32));
    lay.dec.push_back(d.conv("dec.conv3", 32, s.frames));
  }

  size_t prev = s.n_z + s.n_u;
  for (size_t i = 0; i < s.dyn_hidden.size(); ++i) {
    lay.dyn.push_back(d.fc("dyn.fc" + std::to_string(i), prev, s.dyn_hidden[i]));
    prev = s.dyn_hidden[i];
  }
  lay.dyn.push_back(d.fc("dyn.head", prev, 2 * s.n_z));
  if (s.amortized) {
    lay.dyn_a = d.fc("dyn.jac_a", prev, s.n_z * s.n_z);
    lay.dyn_b = d.fc("dyn.jac_b", prev, s.n_z * s.n_u);
  }

  lay.back_z = d.fc("back.z", s.n_z, s.back_nz);
  lay.back_u = d.fc("back.u", s.n_u, s.back_nu);
  lay.back_x = d.fc("back.x", s.obs_dim(), s.back_nx);
  lay.back_joint = d.fc("back.joint", s.back_nz + s.back_nu + s.back_nx, s.back_joint);
  lay.back_head = d.fc("back.head", s.back_joint, 2 * s.n_z);
  return lay;
}

// Frame-plane order <-> channel-last order for conv layers.
std::shared_ptr<const std::vector<size_t>> plane_to_channel_last(const ModelSpec& s) {
  auto idx = std::make_shared<std::vector<size_t>>(s.obs_dim());
  size_t hw = s.img_h * s.img_w;
  for (size_t p = 0; p < hw; ++p)
    for (size_t c = 0; c < s.frames; ++c) (*idx)[p * s.frames + c] = c * hw + p;
  return idx;
}
std::shared_ptr<const std::vector<size_t>> channel_last_to_plane(const ModelSpec& s) {
  auto idx = std::make_shared<std::vector<size_t>>(s.obs_dim());
  size_t hw = s.img_h * s.img_w;
  for (size_t p = 0; p < hw; ++p)
    for (size_t c = 0; c < s.frames; ++c) (*idx)[c * hw + p] = p * s.frames + c;
  return idx;
}

uint64_t fnv1a_init() { return 14695981039346656037ULL; }
void fnv1a_feed(uint64_t& h, const void* data, size_t n) {
  const unsigned char* b = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ULL;
  }
}

struct CheckedWriter {
  std::ofstream f;
  uint64_t hash = fnv1a_init();
  void raw(const void* p, size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    fnv1a_feed(hash, p, n);
  }
  template <class T>
  void put(T v) {
    raw(&v, sizeof(T));
  }
};

struct CheckedReader {
  std::ifstream f;
  uint64_t hash = fnv1a_init();
  size_t offset = 0;
  std::string path;
  void raw(void* p, size_t n, const char* field) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!f)
      throw FormatError("model file " + path + ": unexpected end at offset " +
                        std::to_string(offset) + " reading " + field);
    fnv1a_feed(hash, p, n);
    offset += n;
  }
  template <class T>
  T get(const char* field) {
    T v{};
    raw(&v, sizeof(T), field);
    return v;
  }
};

}  // namespace

// ---------------- spec ----------------

ModelSpec ModelSpec::defaults(Domain d, bool amortized) {
  ModelSpec s;
  s.domain = d;
  s.amortized = amortized;
  switch (d) {
    case Domain::planar:
      break;  // the declared member defaults
    case Domain::pendulum:
      s.n_z = 3;
      s.n_u = 1;
      s.img_h = s.img_w = 48;
      s.frames = 2;
      s.enc_hidden = {500, 500};
      s.dec_hidden = {500, 500};
      s.dyn_hidden = {30, 30};
      s.back_nz = s.back_nu = 10;
      s.back_nx = s.back_joint = 200;
      break;
    case Domain::cartpole:
      s.n_z = 8;
      s.n_u = 1;
      s.img_h = s.img_w = 80;
      s.frames = 2;
      s.backbone = BackboneKind::conv;
      s.enc_hidden = {200};
      s.dec_hidden = {200, 1000, 100};
      s.dyn_hidden = {40, 40};
      s.back_nz = s.back_nu = 10;
      s.back_nx = s.back_joint = 300;
      break;
    case Domain::threelink:
      s.n_z = 8;
      s.n_u = 3;
      s.img_h = s.img_w = 80;
      s.frames = 2;
      s.backbone = BackboneKind::conv;
      s.enc_hidden = {500};
      s.dec_hidden = {500, 2560, 100};
      s.dyn_hidden = {40, 40};
      s.back_nz = s.back_nu = 10;
      s.back_nx = s.back_joint = 400;
      s.conv1_channels = 62;
      break;
  }
  return s;
}

// ---------------- forward passes ----------------

namespace {

// Graph view of param i; bias of a layer is index + 1.
const Tensor& P(const ModelWiring& w, size_t i) { return w.leaves.at(i); }

Tensor fc_layer(const ModelWiring& w, const Tensor& x, size_t wi) {
  return add_rowvec(matmul(x, P(w, wi)), P(w, wi + 1));
}

struct GaussianHead {
  Tensor mean, logvar;
};
GaussianHead split_head(const Tensor& h, size_t n_z) {
  return {slice_cols(h, 0, n_z), clamp(slice_cols(h, n_z, 2 * n_z), kLogvarMin, kLogvarMax)};
}

void check_cols(const Tensor& x, size_t want, const char* who) {
  if (x.shape.size() == 2 && x.cols() == want) return;
  std::string got = "[";
  for (size_t i = 0; i < x.shape.size(); ++i)
    got += (i ? " x " : "") + std::to_string(x.shape[i]);
  throw ShapeError(std::string(who) + ": expected [B x " + std::to_string(want) + "], got " +
                   got + "]");
}

std::vector<ConvGeom> encoder_geoms(const ModelSpec& s) {
  ConvGeom g1{s.img_h, s.img_w, s.frames, s.conv1_channels, kKernel, 1};
  ConvGeom g2{g1.out_h(), g1.out_w(), s.conv1_channels, 32, kKernel, 2};
  ConvGeom g3{g2.out_h(), g2.out_w(), 32, 32, kKernel, 2};
  ConvGeom g4{g3.out_h(), g3.out_w(), 32, 10, kKernel, 2};
  return {g1, g2, g3, g4};
}

}  // namespace

ModelWiring PccModel::wire(Tape& t) const {
  ModelWiring w;
  w.tape = &t;
  w.leaves.reserve(params.size());
  for (const Param& p : params) w.leaves.push_back(t.leaf(p.value, p.shape));
  return w;
}

GaussianParams PccModel::encode(ModelWiring& w, const Tensor& x) const {
  check_cols(x, spec.obs_dim(), "encode");
  Tensor h = x;
  size_t li = 0;
  if (spec.backbone == BackboneKind::conv) {
    h = gather_cols(h, plane_to_channel_last(spec));
    for (const ConvGeom& g : encoder_geoms(spec)) {
      size_t wi = layout.enc[li++];
      h = relu(conv2d(h, P(w, wi), P(w, wi + 1), g));
    }
  }
  for (; li + 1 < layout.enc.size(); ++li) h = relu(fc_layer(w, h, layout.enc[li]));
  Tensor head = fc_layer(w, h, layout.enc.back());
  GaussianHead g = split_head(head, spec.n_z);
  return {g.mean, g.logvar};
}

Tensor PccModel::decode(ModelWiring& w, const Tensor& z) const {
  check_cols(z, spec.n_z, "decode");
  Tensor h = z;
  if (spec.backbone == BackboneKind::mlp) {
    size_t li = 0;
    for (; li + 1 < layout.dec.size(); ++li) h = relu(fc_layer(w, h, layout.dec[li]));
    return fc_layer(w, h, layout.dec.back());
  }
  size_t n_fc = spec.dec_hidden.size();
  for (size_t li = 0; li < n_fc; ++li) h = relu(fc_layer(w, h, layout.dec[li]));
  size_t ph = spec.img_h / 8, pw = spec.img_w / 8;
  ConvGeom c0{ph, pw, 1, 32, kKernel, 1};
  ConvGeom c1{2 * ph, 2 * pw, 32, 32, kKernel, 1};
  ConvGeom c2{4 * ph, 4 * pw, 32, 32, kKernel, 1};
  ConvGeom c3{8 * ph, 8 * pw, 32, spec.frames, kKernel, 1};
  size_t w0 = layout.dec[n_fc], w1 = layout.dec[n_fc + 1], w2 = layout.dec[n_fc + 2],
         w3 = layout.dec[n_fc + 3];
  h = relu(conv2d(h, P(w, w0), P(w, w0 + 1), c0));
  h = upsample_nn2(h, ph, pw, 32);
  h = relu(conv2d(h, P(w, w1), P(w, w1 + 1), c1));
  h = upsample_nn2(h, 2 * ph, 2 * pw, 32);
  h = relu(conv2d(h, P(w, w2), P(w, w2 + 1), c2));
  h = upsample_nn2(h, 4 * ph, 4 * pw, 32);
  h = conv2d(h, P(w, w3), P(w, w3 + 1), c3);
  return gather_cols(h, channel_last_to_plane(spec));
}

namespace {

// Dynamics backbone with recorded pre-activations for the tangent recurrence.
struct DynTrace {
  std::vector<Tensor> pre;
  Tensor last;
};

DynTrace dyn_backbone(const PccModel& m, ModelWiring& w, const Tensor& z, const Tensor& u) {
  std::vector<Tensor> in{z, u};
  Tensor h = concat_cols(in);
  DynTrace tr;
  for (size_t i = 0; i + 1 < m.layout.dyn.size(); ++i) {
    Tensor pre = fc_layer(w, h, m.layout.dyn[i]);
    tr.pre.push_back(pre);
    h = relu(pre);
  }
  tr.last = h;
  return tr;
}

PccModel::DynOut dyn_from_trace(const PccModel& m, ModelWiring& w, const Tensor& z,
                                const DynTrace& tr) {
  Tensor head = fc_layer(w, tr.last, m.layout.dyn.back());
  GaussianHead g = split_head(head, m.spec.n_z);
  PccModel::DynOut out{{add(z, g.mean), g.logvar}, {}, {}, false};
  if (m.spec.amortized) {
    out.jac_a = fc_layer(w, tr.last, m.layout.dyn_a);
    out.jac_b = fc_layer(w, tr.last, m.layout.dyn_b);
    out.has_heads = true;
  }
  return out;
}

}  // namespace

PccModel::DynOut PccModel::dynamics(ModelWiring& w, const Tensor& z, const Tensor& u) const {
  check_cols(z, spec.n_z, "dynamics");
  check_cols(u, spec.n_u, "dynamics");
  DynTrace tr = dyn_backbone(*this, w, z, u);
  return dyn_from_trace(*this, w, z, tr);
}

std::pair<PccModel::DynOut, Tensor> PccModel::dynamics_with_tangent(
    ModelWiring& w, const Tensor& z, const Tensor& u, const Tensor& dz, const Tensor& du,
    TangentKind kind) const {
  check_cols(z, spec.n_z, "dynamics_with_tangent");
  check_cols(dz, spec.n_z, "dynamics_with_tangent");
  check_cols(du, spec.n_u, "dynamics_with_tangent");
  DynTrace tr = dyn_backbone(*this, w, z, u);
  DynOut out = dyn_from_trace(*this, w, z, tr);

  if (kind == TangentKind::amortized_heads) {
    if (!out.has_heads)
      throw ConfigError("dynamics_with_tangent: amortized heads requested on a model without them");
    Tensor tangent = add(rowwise_matvec(out.jac_a, dz, spec.n_z, spec.n_z),
                         rowwise_matvec(out.jac_b, du, spec.n_z, spec.n_u));
    return {out, tangent};
  }
  // Directional derivative of the mean network with the activation pattern
  // held fixed, plus the identity from the skip connection.
  std::vector<Tensor> din{dz, du};
  Tensor dh = concat_cols(din);
  for (size_t i = 0; i + 1 < layout.dyn.size(); ++i)
    dh = mul(relu_mask(tr.pre[i]), matmul(dh, P(w, layout.dyn[i])));
  Tensor dmean = slice_cols(matmul(dh, P(w, layout.dyn.back())), 0, spec.n_z);
  return {out, add(dz, dmean)};
}

GaussianParams PccModel::backward_recognition(ModelWiring& w, const Tensor& zn, const Tensor& u,
                                              const Tensor& x) const {
  check_cols(zn, spec.n_z, "backward_recognition");
  check_cols(u, spec.n_u, "backward_recognition");
  check_cols(x, spec.obs_dim(), "backward_recognition");
  Tensor bz = relu(fc_layer(w, zn, layout.back_z));
  Tensor bu = relu(fc_layer(w, u, layout.back_u));
  Tensor bx = relu(fc_layer(w, x, layout.back_x));
  std::vector<Tensor> parts{bz, bu, bx};
  Tensor j = relu(fc_layer(w, concat_cols(parts), layout.back_joint));
  Tensor head = fc_layer(w, j, layout.back_head);
  GaussianHead g = split_head(head, spec.n_z);
  return {g.mean, g.logvar};
}

GaussianParams PccModel::encode(Tape& t, const Tensor& x) const {
  ModelWiring w = wire(t);
  return encode(w, x);
}

Tensor PccModel::decode(Tape& t, const Tensor& z) const {
  ModelWiring w = wire(t);
  return decode(w, z);
}

PccModel::DynOut PccModel::dynamics(Tape& t, const Tensor& z, const Tensor& u) const {
  ModelWiring w = wire(t);
  return dynamics(w, z, u);
}

GaussianParams PccModel::backward_recognition(Tape& t, const Tensor& zn, const Tensor& u,
                                              const Tensor& x) const {
  ModelWiring w = wire(t);
  return backward_recognition(w, zn, u, x);
}

std::pair<PccModel::DynOut, Tensor> PccModel::dynamics_with_tangent(
    Tape& t, const Tensor& z, const Tensor& u, const Tensor& dz, const Tensor& du,
    TangentKind kind) const {
  ModelWiring w = wire(t);
  return dynamics_with_tangent(w, z, u, dz, du, kind);
}

void PccModel::dynamics_jacobian(const std::vector<double>& z, const std::vector<double>& u,
                                 std::vector<double>& a_out, std::vector<double>& b_out) const {
  if (z.size() != spec.n_z || u.size() != spec.n_u)
    throw ShapeError("dynamics_jacobian: point dims do not match model");
  a_out.assign(spec.n_z * spec.n_z, 0.0);
  b_out.assign(spec.n_z * spec.n_u, 0.0);
  for (size_t row = 0; row < spec.n_z; ++row) {
    Tape t;
    Tensor tz = t.leaf(std::make_shared<std::vector<double>>(z), {1, spec.n_z});
    Tensor tu = t.leaf(std::make_shared<std::vector<double>>(u), {1, spec.n_u});
    DynOut d = dynamics(t, tz, tu);
    std::vector<double> pick(spec.n_z, 0.0);
    pick[row] = 1.0;
    Tensor s = matmul(d.dist.mean, t.constant(std::move(pick), {spec.n_z, 1}));
    t.backward(s);
    const std::vector<double>& gz = t.grad(tz);
    const std::vector<double>& gu = t.grad(tu);
    std::memcpy(&a_out[row * spec.n_z], gz.data(), spec.n_z * sizeof(double));
    std::memcpy(&b_out[row * spec.n_u], gu.data(), spec.n_u * sizeof(double));
  }
}

std::vector<double> PccModel::encode_mean(const std::vector<double>& x) const {
  Tape t;
  GaussianParams g = encode(t, t.constant(x, {1, spec.obs_dim()}));
  return *g.mean.data;
}

std::vector<double> PccModel::dynamics_mean(const std::vector<double>& z,
                                            const std::vector<double>& u) const {
  Tape t;
  DynOut d = dynamics(t, t.constant(z, {1, spec.n_z}), t.constant(u, {1, spec.n_u}));
  return *d.dist.mean.data;
}

std::vector<double> PccModel::decode_probs(const std::vector<double>& z) const {
  Tape t;
  Tensor logits = decode(t, t.constant(z, {1, spec.n_z}));
  std::vector<double> probs(*logits.data);
  for (double& v : probs) v = 1.0 / (1.0 + std::exp(-v));
  return probs;
}

size_t PccModel::param_count() const {
  size_t n = 0;
  for (const Param& p : params) n += p.size();
  return n;
}

// ---------------- init / io ----------------

PccModel init_model(const ModelSpec& spec, uint64_t seed) {
  PccModel m;
  m.spec = spec;
  m.layout = make_layout(spec, &m.params);
  RngStream rng = RngStream::derive(seed, "init");
  for (Param& p : m.params) {
    if (p.is_bias) continue;  // biases stay zero
    double stddev = std::sqrt(2.0 / static_cast<double>(p.shape[0]));
    for (double& v : *p.value) v = rng.normal(0.0, stddev);
  }
  return m;
}

void save_model(const PccModel& m, const std::string& path) {
  CheckedWriter w;
  w.f.open(path, std::ios::binary);
  if (!w.f) throw FormatError("model file " + path + ": cannot open for writing");
  w.raw(kMagic, 4);
  w.put(kVersion);
  const ModelSpec& s = m.spec;
  w.put(static_cast<uint8_t>(s.domain));
  w.put(static_cast<uint8_t>(s.amortized ? 1 : 0));
  w.put(static_cast<uint8_t>(s.backbone));
  auto put32 = [&](size_t v) { w.put(static_cast<uint32_t>(v)); };
  put32(s.n_z);
  put32(s.n_u);
  put32(s.img_h);
  put32(s.img_w);
  put32(s.frames);
  auto put_vec = [&](const std::vector<size_t>& v) {
    put32(v.size());
    for (size_t e : v) put32(e);
  };
  put_vec(s.enc_hidden);
  put_vec(s.dec_hidden);
  put_vec(s.dyn_hidden);
  put32(s.back_nz);
  put32(s.back_nu);
  put32(s.back_nx);
  put32(s.back_joint);
  put32(s.conv1_channels);
  w.put(static_cast<uint64_t>(m.param_count()));
  for (const Param& p : m.params)
    w.raw(p.value->data(), p.value->size() * sizeof(double));
  uint64_t digest = w.hash;
  w.f.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
  if (!w.f) throw FormatError("model file " + path + ": write failed");
}

PccModel load_model(const std::string& path) {
  CheckedReader r;
  r.path = path;
  r.f.open(path, std::ios::binary);
  if (!r.f) throw FormatError("model file " + path + ": cannot open");
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("model file " + path + ": bad magic at offset 0");
  uint16_t version = r.get<uint16_t>("version");
  if (version != kVersion)
    throw FormatError("model file " + path + ": unsupported version " +
                      std::to_string(version));
  ModelSpec s;
  uint8_t dom = r.get<uint8_t>("domain");
  if (dom > 3) throw FormatError("model file " + path + ": bad domain tag");
  s.domain = static_cast<Domain>(dom);
  s.amortized = r.get<uint8_t>("amortized flag") != 0;
  uint8_t bk = r.get<uint8_t>("backbone tag");
  if (bk > 1) throw FormatError("model file " + path + ": bad backbone tag");
  s.backbone = static_cast<BackboneKind>(bk);
  auto get32 = [&](const char* f) { return static_cast<size_t>(r.get<uint32_t>(f)); };
  s.n_z = get32("n_z");
  s.n_u = get32("n_u");
  s.img_h = get32("img_h");
  s.img_w = get32("img_w");
  s.frames = get32("frames");
  auto get_vec = [&](const char* f) {
    size_t n = get32(f);
    if (n > 64) throw FormatError("model file " + path + ": implausible layer count");
    std::vector<size_t> v(n);
    for (size_t& e : v) e = get32(f);
    return v;
  };
  s.enc_hidden = get_vec("enc widths");
  s.dec_hidden = get_vec("dec widths");
  s.dyn_hidden = get_vec("dyn widths");
  s.back_nz = get32("back_nz");
  s.back_nu = get32("back_nu");
  s.back_nx = get32("back_nx");
  s.back_joint = get32("back_joint");
  s.conv1_channels = get32("conv1_channels");

  PccModel m;
  m.spec = s;
  try {
    m.layout = make_layout(s, &m.params);
  } catch (const ConfigError& e) {
    throw FormatError("model file " + path + ": inconsistent spec block: " + e.what());
  }
  uint64_t declared = r.get<uint64_t>("parameter count");
  if (declared != m.param_count())
    throw FormatError("model file " + path + ": parameter count " + std::to_string(declared) +
                      " does not match spec-derived " + std::to_string(m.param_count()));
  for (Param& p : m.params)
    r.raw(p.value->data(), p.value->size() * sizeof(double), p.name.c_str());
  uint64_t expect = r.hash;
  uint64_t stored;
  r.f.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!r.f)
    throw FormatError("model file " + path + ": unexpected end at offset " +
                      std::to_string(r.offset) + " reading checksum");
  if (stored != expect)
    throw FormatError("model file " + path + ": checksum mismatch at offset " +
                      std::to_string(r.offset));
  for (const Param& p : m.params)
    for (double v : *p.value)
      if (!std::isfinite(v))
        throw FormatError("model file " + path + ": non-finite value in " + p.name);
  return m;
}

}  // namespace pcc
