#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pcc/distributions.hpp"
#include "pcc/envs.hpp"
#include "pcc/params.hpp"
#include "pcc/tensor.hpp"

namespace pcc {

enum class BackboneKind : uint8_t { mlp = 0, conv = 1 };

// Network shapes for one domain. `defaults` pins the published per-domain
// values; tests build small custom specs directly.
struct ModelSpec {
  Domain domain = Domain::planar;
  size_t n_z = 2, n_u = 2;
  size_t img_h = 40, img_w = 40, frames = 1;
  bool amortized = false;
  BackboneKind backbone = BackboneKind::mlp;

  std::vector<size_t> enc_hidden{300, 300};  // mlp: hidden widths; conv: fc tail widths
  std::vector<size_t> dec_hidden{300, 300};  // mlp: hidden widths; conv: fc head widths
  std::vector<size_t> dyn_hidden{20, 20};
  size_t back_nz = 5, back_nu = 5, back_nx = 100, back_joint = 100;
  size_t conv1_channels = 32;  // first conv layer width (the arm uses 62)

  size_t obs_dim() const { return frames * img_h * img_w; }
  static ModelSpec defaults(Domain d, bool amortized = false);
};

// Index of the weight param of each layer; its bias is always at index + 1.
struct ParamLayout {
  std::vector<size_t> enc;
  std::vector<size_t> dec;
  std::vector<size_t> dyn;  // hidden layers then gaussian head
  size_t dyn_a = SIZE_MAX, dyn_b = SIZE_MAX;
  size_t back_z = 0, back_u = 0, back_x = 0, back_joint = 0, back_head = 0;
};

// One leaf per parameter on one tape. Every forward pass that shares a tape
// must share a wiring, so parameter gradients accumulate in a single node
// that training reads back. Tests may substitute arbitrary graph tensors.
struct ModelWiring {
  Tape* tape = nullptr;
  std::vector<Tensor> leaves;  // aligned with PccModel::params
};

// How dynamics_with_tangent forms the directional derivative.
enum class TangentKind {
  masked_chain,    // differentiate the mean net, activation patterns held fixed
  amortized_heads  // apply the learned A, B head outputs
};

// The four learned networks sharing one flat parameter list. All forward
// passes are pure functions of (params, inputs) and build onto the caller's
// tape; batched inputs are [B x dim] rows.
class PccModel {
 public:
  ModelSpec spec;
  std::vector<Param> params;
  ParamLayout layout;

  struct DynOut {
    GaussianParams dist;  // mean carries the z skip connection
    Tensor jac_a, jac_b;  // amortized heads, rows are vec(A), vec(B)
    bool has_heads = false;
  };

  ModelWiring wire(Tape& t) const;

  GaussianParams encode(ModelWiring& w, const Tensor& x) const;
  Tensor decode(ModelWiring& w, const Tensor& z) const;  // pixel logits, frame-plane order
  DynOut dynamics(ModelWiring& w, const Tensor& z, const Tensor& u) const;
  GaussianParams backward_recognition(ModelWiring& w, const Tensor& zn, const Tensor& u,
                                      const Tensor& x) const;
  std::pair<DynOut, Tensor> dynamics_with_tangent(ModelWiring& w, const Tensor& z,
                                                  const Tensor& u, const Tensor& dz,
                                                  const Tensor& du, TangentKind kind) const;

  // Single-use conveniences that wire a private leaf set.
  GaussianParams encode(Tape& t, const Tensor& x) const;
  Tensor decode(Tape& t, const Tensor& z) const;
  DynOut dynamics(Tape& t, const Tensor& z, const Tensor& u) const;
  GaussianParams backward_recognition(Tape& t, const Tensor& zn, const Tensor& u,
                                      const Tensor& x) const;
  std::pair<DynOut, Tensor> dynamics_with_tangent(Tape& t, const Tensor& z, const Tensor& u,
                                                  const Tensor& dz, const Tensor& du,
                                                  TangentKind kind) const;

  // Exact Jacobians of the dynamics mean at one point, one reverse pass per
  // output row. A is n_z x n_z, B is n_z x n_u, both row-major.
  void dynamics_jacobian(const std::vector<double>& z, const std::vector<double>& u,
                         std::vector<double>& a_out, std::vector<double>& b_out) const;

  // Single-point conveniences for the controller (no gradients kept).
  std::vector<double> encode_mean(const std::vector<double>& x) const;
  std::vector<double> dynamics_mean(const std::vector<double>& z,
                                    const std::vector<double>& u) const;
  std::vector<double> decode_probs(const std::vector<double>& z) const;

  size_t param_count() const;
};

PccModel init_model(const ModelSpec& spec, uint64_t seed);
void save_model(const PccModel& m, const std::string& path);
PccModel load_model(const std::string& path);

}  // namespace pcc
