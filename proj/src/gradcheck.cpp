#include "dsmm/gradcheck.hpp"

#include "dsmm/random.hpp"
#include "dsmm/reconstruction.hpp"
#include "dsmm/sampling.hpp"

namespace dsmm {
namespace {

// Central differences for the conv2 tensors. Perturbing kernel (or bias) o only
// moves channel o of the conv2 pre-activation, so the loss is re-evaluated by
// recomputing that channel and adding its change through conv3 to the cached
// refinement. Exact up to rounding, and O(channels) cheaper than a full pass.
Tensor conv2_finite_diff(const ForwardCache& cache, const ReconstructionParams& recon,
                         bool bias, double eps) {
  const Tensor& x = cache.input;
  const ConvLayer& l2 = recon.stack[1];
  const ConvLayer& l3 = recon.stack[2];
  ConvSpec one = stack_conv_spec(recon, 1);
  one.out_channels = 1;
  ConvSpec tail = stack_conv_spec(recon, 2);
  tail.has_bias = false;

  auto loss_with = [&](Index o, const Tensor& kernel, double b) {
    const Tensor pre = conv2d_forward(cache.act1, kernel, Tensor({1}, b), one);
    const Tensor act = relu(pre);
    Tensor delta = act;
    delta.vec() -= cache.act2.vec().segment(o * act.size(), act.size());
    const Index kh = l3.weights.dim(2), kw = l3.weights.dim(3);
    const Tensor k3({1, 1, kh, kw}, l3.weights.vec().segment(o * kh * kw, kh * kw));
    Tensor out = cache.output;
    out.vec() += conv2d_forward(delta, k3, std::nullopt, tail).vec();
    return mse_loss(out, x).loss;
  };

  const Tensor& param = bias ? l2.bias : l2.weights;
  Tensor grad = Tensor::zeros_like(param);
  const Index per = bias ? 1 : l2.weights.item_size();
  for (Index i = 0; i < param.size(); ++i) {
    const Index o = i / per;
    Tensor kernel = l2.weights.item(o);
    double b = l2.bias[o];
    double& v = bias ? b : kernel[i % per];
    const double orig = v;
    v = orig + eps;
    const double up = loss_with(o, kernel, b);
    v = orig - eps;
    const double down = loss_with(o, kernel, b);
    grad[i] = (up - down) / (2 * eps);
  }
  return grad;
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, const GradcheckOptions& o) {
  const Index B = o.block_size;
  const Index n_b = measurement_dim(o.sampling_ratio, B);

  Rng rng = make_rng(seed, "gradcheck");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor x({1, 1, B, B});
  for (Index i = 0; i < x.size(); ++i) x[i] = unit(rng);

  SamplingLayerState sampling = SamplingLayerState::random(B, n_b, o.alpha, rng);
  const MeasurementMatrix phi = sampling.constrained_matrix();
  ReconstructionParams recon = ReconstructionParams::random(B, n_b, rng, o.features);
  // Non-zero biases so the bias paths carry signal.
  for (Tensor* t : {&recon.init_bias, &recon.stack[0].bias, &recon.stack[1].bias, &recon.stack[2].bias})
    fill_normal(t->vec(), rng, 0.1);

  const ForwardCache cache = forward(x, phi, recon);
  const LossResult loss = mse_loss(cache.output, x);
  NetworkGrads grads = backward(cache, recon, loss.grad);
  if (o.corrupt_backward) grads.recon.stack[1].weights.vec() *= 1.01;

  GradcheckReport report;
  auto record = [&](const std::string& name, const Tensor& analytic, const Tensor& numeric) {
    report.groups.push_back({name, relative_error(analytic, numeric)});
  };

  {
    const Tensor at({phi.n_b(), phi.n_B()},
                    Eigen::Map<const Eigen::VectorXd>(phi.entries.data(), phi.entries.size()));
    auto f = [&](const Tensor& p) {
      MeasurementMatrix probe = phi;
      probe.provenance = Provenance::kImported;  // perturbed rows leave the unit sphere
      probe.entries = Eigen::Map<const RowMatrixXd>(p.data(), phi.n_b(), phi.n_B());
      return mse_loss(forward(x, probe, recon).output, x).loss;
    };
    const Tensor analytic({phi.n_b(), phi.n_B()},
                          Eigen::Map<const Eigen::VectorXd>(grads.phi.data(), grads.phi.size()));
    record("phi", analytic, finite_diff_grad(f, at, o.eps));
  }

  const auto names = ReconstructionParams::tensor_names();
  const auto analytic = grads.recon.tensors();
  for (size_t t = 0; t < names.size(); ++t) {
    if (names[t] == "conv2.weights" || names[t] == "conv2.bias") {
      record(names[t], *analytic[t], conv2_finite_diff(cache, recon, names[t] == "conv2.bias", o.eps));
      continue;
    }
    ReconstructionParams probe = recon;
    Tensor* slot = probe.tensors()[t];
    auto f = [&](const Tensor& p) {
      *slot = p;
      return mse_loss(forward(x, phi, probe).output, x).loss;
    };
    record(names[t], *analytic[t], finite_diff_grad(f, *recon.tensors()[t], o.eps));
  }

  report.worst = report.groups.front();
  for (const auto& g : report.groups)
    if (g.relative_error > report.worst.relative_error) report.worst = g;
  report.passed = report.worst.relative_error < o.tolerance;
  return report;
}

}  // namespace dsmm
