#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pcc/model.hpp"

using namespace pcc;

namespace {

ModelSpec tiny_mlp_spec(bool amortized = false) {
  ModelSpec s;
  s.domain = Domain::planar;
  s.n_z = 3;
  s.n_u = 2;
  s.img_h = 4;
  s.img_w = 3;
  s.frames = 1;
  s.amortized = amortized;
  s.enc_hidden = {7};
  s.dec_hidden = {6};
  s.dyn_hidden = {8, 8};
  s.back_nz = 4;
  s.back_nu = 4;
  s.back_nx = 6;
  s.back_joint = 5;
  return s;
}

std::vector<double> randvec(size_t n, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RngStream r = RngStream::derive(seed, "model-test");
  std::vector<double> v(n);
  for (double& x : v) x = r.uniform(lo, hi);
  return v;
}

void set_param(PccModel& m, size_t idx, const std::vector<double>& v) {
  REQUIRE(m.params[idx].value->size() == v.size());
  *m.params[idx].value = v;
}

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("defaults pin the published per-domain shapes") {
  ModelSpec p = ModelSpec::defaults(Domain::planar);
  CHECK(p.n_z == 2);
  CHECK(p.n_u == 2);
  CHECK(p.obs_dim() == 1600);
  CHECK(p.backbone == BackboneKind::mlp);
  CHECK(p.enc_hidden == std::vector<size_t>{300, 300});
  CHECK(p.back_nx == 100);

  ModelSpec pe = ModelSpec::defaults(Domain::pendulum);
  CHECK(pe.n_z == 3);
  CHECK(pe.obs_dim() == 4608);
  CHECK(pe.dyn_hidden == std::vector<size_t>{30, 30});
  CHECK(pe.back_joint == 200);

  ModelSpec c = ModelSpec::defaults(Domain::cartpole);
  CHECK(c.n_z == 8);
  CHECK(c.obs_dim() == 12800);
  CHECK(c.backbone == BackboneKind::conv);
  CHECK(c.conv1_channels == 32);
  CHECK(c.dec_hidden == std::vector<size_t>{200, 1000, 100});

  ModelSpec l = ModelSpec::defaults(Domain::threelink);
  CHECK(l.n_z == 8);
  CHECK(l.n_u == 3);
  CHECK(l.conv1_channels == 62);
  CHECK(l.enc_hidden == std::vector<size_t>{500});
  CHECK(l.back_nx == 400);

  PccModel m = init_model(p, 1);
  CHECK(m.params[m.layout.enc[0]].shape == std::vector<size_t>{1600, 300});
  CHECK(m.params[m.layout.back_x].shape == std::vector<size_t>{1600, 100});
  CHECK(m.params[m.layout.back_joint].shape == std::vector<size_t>{110, 100});
}

TEST_CASE("encode and decode: shapes, purity, finite on degenerate input") {
  PccModel m = init_model(tiny_mlp_spec(), 7);
  std::vector<double> x = randvec(2 * 12, 1, 0.0, 1.0);

  Tape t1;
  GaussianParams g1 = m.encode(t1, t1.constant(x, {2, 12}));
  CHECK(g1.mean.shape == std::vector<size_t>{2, 3});
  CHECK(g1.logvar.shape == std::vector<size_t>{2, 3});

  Tape t2;
  GaussianParams g2 = m.encode(t2, t2.constant(x, {2, 12}));
  CHECK(*g1.mean.data == *g2.mean.data);
  CHECK(*g1.logvar.data == *g2.logvar.data);

  Tape t3;
  GaussianParams gz = m.encode(t3, t3.constant(std::vector<double>(12, 0.0), {1, 12}));
  for (double v : *gz.mean.data) CHECK(std::isfinite(v));

  Tape t4;
  Tensor logits = m.decode(t4, t4.constant(randvec(3, 2), {1, 3}));
  CHECK(logits.shape == std::vector<size_t>{1, 12});

  Tape t5;
  CHECK_THROWS_AS(m.encode(t5, t5.constant(randvec(5, 3), {1, 5})), ShapeError);
}

TEST_CASE("logvar heads clamp into the declared range") {
  PccModel m = init_model(tiny_mlp_spec(), 3);
  // Blow up the encoder head bias so raw logvar exceeds the clamp range.
  std::vector<double> bias(2 * 3, 0.0);
  for (size_t i = 3; i < 6; ++i) bias[i] = 1e6;
  set_param(m, m.layout.enc.back() + 1, bias);
  Tape t;
  GaussianParams g = m.encode(t, t.constant(randvec(12, 4, 0.0, 1.0), {1, 12}));
  for (double v : *g.logvar.data) CHECK(v == kLogvarMax);
}

TEST_CASE("dynamics skip connection: zero head gives mean = z exactly") {
  ModelSpec s = tiny_mlp_spec();
  PccModel m = init_model(s, 11);
  size_t head = m.layout.dyn.back();
  set_param(m, head, std::vector<double>(m.params[head].size(), 0.0));
  set_param(m, head + 1, std::vector<double>(m.params[head + 1].size(), 0.0));

  std::vector<double> z = randvec(2 * 3, 5), u = randvec(2 * 2, 6);
  Tape t;
  auto out = m.dynamics(t, t.constant(z, {2, 3}), t.constant(u, {2, 2}));
  CHECK(*out.dist.mean.data == z);
  for (double v : *out.dist.logvar.data) CHECK(v == 0.0);
}

TEST_CASE("dynamics_jacobian recovers a hand-built affine map exactly") {
  ModelSpec s = tiny_mlp_spec();
  s.dyn_hidden = {};  // head is a single affine layer on [z, u]
  PccModel m = init_model(s, 13);
  // mean = z + [z u] W[:, 0:3], so A = I + Wz^T rows, B = Wu^T rows.
  std::vector<double> w((3 + 2) * 6, 0.0);
  auto at = [&](size_t r, size_t c) -> double& { return w[r * 6 + c]; };
  const double M[3][3] = {{0.3, -0.2, 0.05}, {0.0, 0.4, -0.1}, {0.7, 0.02, -0.3}};
  const double N[3][2] = {{1.0, -0.5}, {0.25, 0.0}, {-0.75, 2.0}};
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j) at(i, j) = M[i][j];
  for (size_t i = 0; i < 2; ++i)
    for (size_t j = 0; j < 3; ++j) at(3 + i, j) = N[j][i];
  set_param(m, m.layout.dyn.back(), w);

  std::vector<double> a, b;
  m.dynamics_jacobian({0.2, -0.4, 0.9}, {0.3, 0.1}, a, b);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j)
      CHECK(a[i * 3 + j] == doctest::Approx((i == j ? 1.0 : 0.0) + M[j][i]).epsilon(1e-12));
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 2; ++j) CHECK(b[i * 2 + j] == doctest::Approx(N[i][j]).epsilon(1e-12));
}

TEST_CASE("skip-connection-only dynamics has A = I") {
  ModelSpec s = tiny_mlp_spec();
  s.dyn_hidden = {};
  PccModel m = init_model(s, 17);
  size_t head = m.layout.dyn.back();
  set_param(m, head, std::vector<double>(m.params[head].size(), 0.0));
  std::vector<double> a, b;
  m.dynamics_jacobian({0.5, 0.5, -0.5}, {0.0, 1.0}, a, b);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j) CHECK(a[i * 3 + j] == (i == j ? 1.0 : 0.0));
  for (double v : b) CHECK(v == 0.0);
}

TEST_CASE("dynamics_jacobian matches central differences at 100 random points") {
  PccModel m = init_model(tiny_mlp_spec(), 19);
  const double h = 1e-6;
  double worst = 0.0;
  for (int pt = 0; pt < 100; ++pt) {
    std::vector<double> z = randvec(3, 100 + pt), u = randvec(2, 200 + pt);
    std::vector<double> a, b;
    m.dynamics_jacobian(z, u, a, b);
    for (size_t j = 0; j < 5; ++j) {
      std::vector<double> zp = z, zm = z, up = u, um = u;
      std::vector<double> fp, fm;
      if (j < 3) {
        zp[j] += h;
        zm[j] -= h;
        fp = m.dynamics_mean(zp, u);
        fm = m.dynamics_mean(zm, u);
      } else {
        up[j - 3] += h;
        um[j - 3] -= h;
        fp = m.dynamics_mean(z, up);
        fm = m.dynamics_mean(z, um);
      }
      for (size_t i = 0; i < 3; ++i) {
        double fd = (fp[i] - fm[i]) / (2 * h);
        double an = j < 3 ? a[i * 3 + j] : b[i * 2 + (j - 3)];
        worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(an)));
      }
    }
  }
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-5);
}

TEST_CASE("dynamics_with_tangent equals the Jacobian action (exact mode)") {
  PccModel m = init_model(tiny_mlp_spec(), 23);
  std::vector<double> z = randvec(2 * 3, 31), u = randvec(2 * 2, 32);
  std::vector<double> dz = randvec(2 * 3, 33), du = randvec(2 * 2, 34);
  Tape t;
  auto [out, tangent] =
      m.dynamics_with_tangent(t, t.constant(z, {2, 3}), t.constant(u, {2, 2}),
                              t.constant(dz, {2, 3}), t.constant(du, {2, 2}),
                              TangentKind::masked_chain);
  CHECK(tangent.shape == std::vector<size_t>{2, 3});
  for (size_t r = 0; r < 2; ++r) {
    std::vector<double> zr(z.begin() + r * 3, z.begin() + (r + 1) * 3);
    std::vector<double> ur(u.begin() + r * 2, u.begin() + (r + 1) * 2);
    std::vector<double> a, b;
    m.dynamics_jacobian(zr, ur, a, b);
    for (size_t i = 0; i < 3; ++i) {
      double want = 0.0;
      for (size_t j = 0; j < 3; ++j) want += a[i * 3 + j] * dz[r * 3 + j];
      for (size_t j = 0; j < 2; ++j) want += b[i * 2 + j] * du[r * 2 + j];
      CHECK((*tangent.data)[r * 3 + i] == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("amortized heads feed the tangent and expose their shapes") {
  ModelSpec s = tiny_mlp_spec(true);
  PccModel m = init_model(s, 29);
  REQUIRE(m.layout.dyn_a != SIZE_MAX);
  // Zero the head weights and write vec(M), vec(N) into the biases: the
  // tangent must become M dz + N du regardless of (z, u).
  const double M[3][3] = {{0.5, 0.1, 0.0}, {-0.2, 1.0, 0.3}, {0.0, 0.0, 2.0}};
  const double N[3][2] = {{1.0, 0.0}, {0.0, -1.0}, {0.5, 0.5}};
  set_param(m, m.layout.dyn_a, std::vector<double>(m.params[m.layout.dyn_a].size(), 0.0));
  set_param(m, m.layout.dyn_b, std::vector<double>(m.params[m.layout.dyn_b].size(), 0.0));
  std::vector<double> ma(9), nb(6);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j) ma[i * 3 + j] = M[i][j];
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 2; ++j) nb[i * 2 + j] = N[i][j];
  set_param(m, m.layout.dyn_a + 1, ma);
  set_param(m, m.layout.dyn_b + 1, nb);

  std::vector<double> dz = randvec(3, 41), du = randvec(2, 42);
  Tape t;
  auto [out, tangent] =
      m.dynamics_with_tangent(t, t.constant(randvec(3, 43), {1, 3}),
                              t.constant(randvec(2, 44), {1, 2}), t.constant(dz, {1, 3}),
                              t.constant(du, {1, 2}), TangentKind::amortized_heads);
  CHECK(out.has_heads);
  CHECK(out.jac_a.shape == std::vector<size_t>{1, 9});
  CHECK(out.jac_b.shape == std::vector<size_t>{1, 6});
  for (size_t i = 0; i < 3; ++i) {
    double want = 0.0;
    for (size_t j = 0; j < 3; ++j) want += M[i][j] * dz[j];
    for (size_t j = 0; j < 2; ++j) want += N[i][j] * du[j];
    CHECK((*tangent.data)[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("backward_recognition: shapes and purity") {
  PccModel m = init_model(tiny_mlp_spec(), 37);
  std::vector<double> zn = randvec(2 * 3, 51), u = randvec(2 * 2, 52),
                      x = randvec(2 * 12, 53, 0.0, 1.0);
  Tape t1, t2;
  GaussianParams g1 = m.backward_recognition(t1, t1.constant(zn, {2, 3}),
                                             t1.constant(u, {2, 2}), t1.constant(x, {2, 12}));
  GaussianParams g2 = m.backward_recognition(t2, t2.constant(zn, {2, 3}),
                                             t2.constant(u, {2, 2}), t2.constant(x, {2, 12}));
  CHECK(g1.mean.shape == std::vector<size_t>{2, 3});
  CHECK(*g1.mean.data == *g2.mean.data);
  CHECK(m.params[m.layout.back_z].shape == std::vector<size_t>{3, 4});
  CHECK(m.params[m.layout.back_joint].shape == std::vector<size_t>{4 + 4 + 6, 5});
}

TEST_CASE("conv backbone: shapes, channel routing, composite input gradient") {
  ModelSpec s;
  s.domain = Domain::cartpole;
  s.n_z = 2;
  s.n_u = 1;
  s.img_h = 16;
  s.img_w = 16;
  s.frames = 2;
  s.backbone = BackboneKind::conv;
  s.conv1_channels = 4;
  s.enc_hidden = {6};
  s.dec_hidden = {5, 4};
  s.dyn_hidden = {4};
  s.back_nz = 3;
  s.back_nu = 3;
  s.back_nx = 4;
  s.back_joint = 4;
  PccModel m = init_model(s, 101);

  const size_t frame = 16 * 16, obs = 2 * frame;
  std::vector<double> x = randvec(obs, 61, 0.0, 1.0);
  Tape t;
  GaussianParams g = m.encode(t, t.constant(x, {1, obs}));
  CHECK(g.mean.shape == std::vector<size_t>{1, 2});
  Tape td;
  Tensor logits = m.decode(td, td.constant(randvec(2, 62), {1, 2}));
  CHECK(logits.shape == std::vector<size_t>{1, obs});

  // Route only the second frame through conv1: zero the kernel except the
  // center tap of input channel 1. Changing frame 0 must not alter the code.
  PccModel r = init_model(s, 102);
  size_t k0 = r.layout.enc[0];
  std::vector<double> kernel(r.params[k0].size(), 0.0);
  size_t center_row = (2 * 5 + 2) * 2 + 1;
  size_t cout1 = s.conv1_channels;
  for (size_t oc = 0; oc < cout1; ++oc) kernel[center_row * cout1 + oc] = 1.0;
  set_param(r, k0, kernel);
  std::vector<double> base = randvec(obs, 63, 0.0, 1.0);
  std::vector<double> frame0_changed = base;
  for (size_t i = 0; i < frame; ++i) frame0_changed[i] += 0.37;
  std::vector<double> frame1_changed = base;
  for (size_t i = frame; i < obs; ++i) frame1_changed[i] += 0.37;
  Tape ta, tb, tc;
  GaussianParams ga = r.encode(ta, ta.constant(base, {1, obs}));
  GaussianParams gb = r.encode(tb, tb.constant(frame0_changed, {1, obs}));
  GaussianParams gc = r.encode(tc, tc.constant(frame1_changed, {1, obs}));
  CHECK(*ga.mean.data == *gb.mean.data);
  CHECK(*ga.mean.data != *gc.mean.data);

  // Composite gradient through encode -> decode along 6 random input
  // directions. With thousands of relu units the smallest pre-activation is
  // tiny, so the kink margin only needs to beat the FD step times the
  // direction sensitivity (~0.05): 1e-6 leaves a 20x cushion at h = 1e-6.
  std::vector<double> dirs = randvec(6 * obs, 70, -0.02, 0.02);
  auto build = [&](Tape& tape, const Tensor& theta) {
    Tensor v = matmul(reshape(theta, {1, 6}), tape.constant(dirs, {6, obs}));
    Tensor input = add(v, tape.constant(randvec(obs, 71, 0.05, 0.95), {1, obs}));
    GaussianParams code = m.encode(tape, input);
    Tensor out = m.decode(tape, code.mean);
    return sum_all(mul(out, out));
  };
  std::vector<double> theta0;
  bool found = false;
  for (uint64_t attempt = 0; attempt < 64 && !found; ++attempt) {
    theta0 = randvec(6, 80 + attempt, -1.0, 1.0);
    Tape tp;
    build(tp, tp.constant(theta0, {1, 6}));
    found = tp.min_abs_relu_input() > 1e-6;
  }
  REQUIRE(found);
  auto res = grad_check(build, theta0, 1e-6);
  INFO("worst index " << res.worst_index);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("init: deterministic per seed, seed changes parameters") {
  ModelSpec s = tiny_mlp_spec();
  PccModel a = init_model(s, 5), b = init_model(s, 5), c = init_model(s, 6);
  bool same = true, diff = false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    same = same && (*a.params[i].value == *b.params[i].value);
    diff = diff || (*a.params[i].value != *c.params[i].value);
    if (a.params[i].is_bias)
      for (double v : *a.params[i].value) CHECK(v == 0.0);
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("checkpoint: bitwise round-trip, corruption and version rejection") {
  PccModel m = init_model(tiny_mlp_spec(true), 77);
  std::string path = tmp_path("pcc_model_test.pccm");
  save_model(m, path);
  PccModel r = load_model(path);
  CHECK(r.spec.amortized);
  CHECK(r.spec.n_z == m.spec.n_z);
  REQUIRE(r.params.size() == m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i) {
    CHECK(r.params[i].name == m.params[i].name);
    CHECK(*r.params[i].value == *m.params[i].value);
  }

  // Flip one byte mid-params: checksum must catch it and report an offset.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char byte;
    f.seekg(200);
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x40);
    f.seekp(200);
    f.write(&byte, 1);
  }
  try {
    load_model(path);
    FAIL("corrupt file accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  // Unsupported version.
  save_model(m, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    uint16_t v = 999;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  CHECK_THROWS_AS(load_model(path), FormatError);

  // Truncation.
  save_model(m, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  CHECK_THROWS_AS(load_model(path), FormatError);
  std::filesystem::remove(path);
}
