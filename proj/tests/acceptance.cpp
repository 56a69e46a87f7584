// End-to-end acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "dsmm/cli.hpp"
#include "dsmm/cs_solver.hpp"
#include "dsmm/evaluation.hpp"
#include "dsmm/gradcheck.hpp"
#include "dsmm/io.hpp"
#include "dsmm/metrics.hpp"
#include "dsmm/sampling.hpp"
#include "dsmm/trainer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace dsmm;
using dsmm::testing::gaussian_matrix;
using dsmm::testing::random_image;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  double limit_s = 0.0;  // 0: no runtime bound
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int run_cli(std::vector<std::string> args, std::string* captured = nullptr) {
  args.insert(args.begin(), "dsmm");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (captured) *captured = out.str() + err.str();
  return code;
}

// ---------------------------------------------------------------------------

Outcome constraint_invariants() {
  Outcome o{true, "", 10.0};
  const Index n_b = 16, B = 8, n_B = B * B;
  double worst_norm = 0.0, worst_idem = 0.0;
  long count_misses = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RowMatrixXd theta = gaussian_matrix(n_b, n_B, seed);
    for (double alpha : {0.01, 0.02, 0.05, 0.2, 0.5, 0.9, 1.0}) {
      const ConstrainedMatrix c = constrain(theta, alpha, B);
      const Index total = n_b * n_B;
      const Index want = total - static_cast<Index>(std::llround((1.0 - alpha) * total));
      if (c.matrix.nonzeros() != want) ++count_misses;
      for (Index k = 0; k < n_b; ++k)
        if (!c.flagged[static_cast<size_t>(k)])
          worst_norm = std::max(worst_norm, std::abs(c.matrix.entries.row(k).norm() - 1.0));
      const ConstrainedMatrix again = constrain(c.matrix.entries, alpha, B);
      worst_idem = std::max(worst_idem, (again.matrix.entries - c.matrix.entries).cwiseAbs().maxCoeff());
    }
  }
  o.pass = count_misses == 0 && worst_norm <= 1e-9 && worst_idem <= 1e-15;
  o.detail = "700 cases, count misses " + std::to_string(count_misses) + ", max |norm-1| " +
             fmt("%.2e", worst_norm) + ", idempotence " + fmt("%.2e", worst_idem);
  return o;
}

Outcome sampling_equivalence() {
  Outcome o{true, "", 10.0};
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const bool big = i % 2 == 1;
    const Index B = big ? 32 : 8;
    const Index n_b = big ? measurement_dim(0.1, 32) : measurement_dim(0.25, 8);
    const MeasurementMatrix phi = generate_grm(n_b, B * B, 100 + i);
    const RowMatrixXd img = random_image(B * (2 + i % 3), B * (3 + i % 2), 200 + i);
    const Tensor conv = sample_image(as_tensor(img), phi);
    const Tensor dense = testing::dense_block_sample(img, phi.entries, B);
    worst = std::max(worst, (conv.vec() - dense.vec()).cwiseAbs().maxCoeff());
  }
  o.pass = worst < 1e-10;
  o.detail = "20 images (B=8 n_b=16, B=32 n_b=102), max abs diff " + fmt("%.2e", worst);
  return o;
}

Outcome gradient_checks() {
  Outcome o{true, "", 60.0};
  double worst = 0.0;
  std::string group;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const GradcheckReport r = run_gradcheck(seed);
    o.pass = o.pass && r.passed;
    if (r.worst.relative_error > worst) {
      worst = r.worst.relative_error;
      group = r.worst.group;
    }
  }
  o.pass = o.pass && worst < 1e-5;
  o.detail = "5 seeds, worst relative error " + fmt("%.2e", worst) + " (" + group + ")";
  return o;
}

Outcome train_step_update() {
  Outcome o;
  double worst_update = 0.0;
  bool restore_exact = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.block_size = 2;
    cfg.sampling_ratio = 0.5;
    cfg.alpha = 0.5;
    cfg.patch_size = 2;
    cfg.batch_size = 1;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.features = 2;
    const RowMatrixXd theta_g = gaussian_matrix(2, 4, seed);
    SamplingLayerState sampling(2, theta_g, 0.5);
    Rng rng = make_rng(seed, "init");
    ReconstructionParams recon = ReconstructionParams::random(2, 2, rng, 2);
    fill_normal(recon.init_bias.vec(), rng, 0.5);
    for (auto& layer : recon.stack) {
      layer.weights.vec().setZero();
      layer.bias.vec().setZero();
    }
    OptimizerState opt = OptimizerState::zeros_like(sampling, recon);
    const RowMatrixXd x = random_image(2, 2, seed + 50);
    const double gamma = 0.05;

    // With the conv stack zeroed the network is x_hat = W Phi x + b, so
    // dL/dPhi = W^T (x_hat - x) x^T.
    const RowMatrixXd s = testing::rank_zero(theta_g, 4);
    RowMatrixXd phi(2, 4), fprime(2, 4);
    for (Index k = 0; k < 2; ++k) {
      const double omega = s.row(k).squaredNorm();
      for (Index j = 0; j < 4; ++j) {
        phi(k, j) = omega == 0.0 ? 0.0 : s(k, j) / std::sqrt(omega);
        fprime(k, j) = omega == 0.0 ? 1.0 : 1.0 - s(k, j) * s(k, j) / omega;
      }
    }
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), 4);
    const Eigen::Map<const RowMatrixXd> W(recon.init_weights.data(), 4, 2);
    const Eigen::VectorXd r = W * (phi * xv) + recon.init_bias.vec() - xv;
    const RowMatrixXd grad = (W.transpose() * r) * xv.transpose();
    const RowMatrixXd expect = theta_g - gamma * grad.cwiseProduct(fprime);

    const StepResult step = train_step(Tensor({1, 1, 2, 2}, xv), sampling, recon, opt, gamma, cfg);
    worst_update = std::max(worst_update, (sampling.theta() - expect).cwiseAbs().maxCoeff());
    restore_exact = restore_exact &&
                    std::memcmp(step.theta_saved.data(), theta_g.data(), sizeof(double) * 8) == 0 &&
                    std::memcmp(step.theta_restored.data(), theta_g.data(), sizeof(double) * 8) == 0;
  }
  o.pass = worst_update <= 1e-12 && restore_exact;
  o.detail = "5 instances n_b=2 n_B=4, max update error " + fmt("%.2e", worst_update) +
             ", save/restore " + (restore_exact ? "bit-exact" : "MISMATCH");
  return o;
}

Outcome ista_correctness() {
  Outcome o{true, "", 60.0};
  double worst_rise = -INFINITY;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const MeasurementMatrix phi = generate_grm(16, 64, 1000 + seed);
    const Eigen::VectorXd y = gaussian_matrix(16, 1, 2000 + seed);
    SolverConfig cfg;
    cfg.accelerated = false;
    cfg.lambda = 0.05;
    cfg.max_iters = 200;
    std::vector<double> trace;
    IstaSolver(phi, cfg).solve(y, nullptr, &trace);
    for (size_t k = 1; k < trace.size(); ++k) worst_rise = std::max(worst_rise, trace[k] - trace[k - 1]);
  }

  const MeasurementMatrix phi = generate_grm(32, 64, 3);
  RowMatrixXd coeffs = RowMatrixXd::Zero(8, 8);
  coeffs(0, 0) = 3.0;
  coeffs(1, 2) = -1.0;
  coeffs(3, 0) = 0.5;
  coeffs(5, 6) = 0.8;
  const RowMatrixXd x0 = idct2(coeffs);
  const Eigen::Map<const Eigen::VectorXd> xv(x0.data(), 64);
  SolverConfig sparse_cfg;
  sparse_cfg.lambda = 1e-4;
  sparse_cfg.max_iters = 5000;
  sparse_cfg.rel_tol = 1e-10;
  const double sparse_db = psnr(ista_block(phi.entries * xv, phi, sparse_cfg), xv);

  MeasurementMatrix eye;
  eye.block_size = 8;
  eye.entries = RowMatrixXd::Identity(64, 64);
  SolverConfig eye_cfg;
  eye_cfg.lambda = 1e-12;
  const RowMatrixXd img = random_image(8, 8, 1);
  const Eigen::Map<const Eigen::VectorXd> yv(img.data(), 64);
  const double eye_db = psnr(ista_block(yv, eye, eye_cfg), yv);

  o.pass = worst_rise <= 1e-12 && sparse_db > 40.0 && eye_db > 100.0;
  o.detail = "50 plain-ISTA runs, max objective rise " + fmt("%.2e", std::max(worst_rise, 0.0)) +
             "; 4-sparse DCT " + fmt("%.1f", sparse_db) + " dB; identity " + fmt("%.1f", eye_db) + " dB";
  return o;
}

// Criteria 6 and 7 share one set of training runs.
struct DeskRun {
  std::vector<std::uint64_t> train_seeds{1, 2, 3};
  std::vector<std::uint64_t> grm_seeds{1, 2, 3, 4, 5};
  fs::path work;
  std::map<std::uint64_t, std::string> loss_csv;
  std::map<std::uint64_t, double> loss_ratio;
  std::string rerun_csv;
  Index train_images = 0, test_images = 0;
  std::map<std::string, std::pair<double, double>> means;  // label -> (psnr, ssim)
  std::string error;
  double seconds = 0.0;
};

const char* kDeskConfig = R"({
  "block_size": 8, "sampling_ratio": 0.25, "alpha": 0.2,
  "patch_size": 32, "batch_size": 8, "epochs": 10, "iters_per_epoch": 50,
  "checkpoint_every": 0, "loss_divisor": "batch_pixels",
  "lr_schedule": {"phase1_end": 6, "phase2_end": 9, "phase1_rate": 0.05,
                  "phase2_start_rate": 0.05, "phase2_end_rate": 0.005, "phase3_rate": 0.005},
  "augment": {"enabled": true}
})";

double loss_ratio_of(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> loss;
  while (std::getline(in, line)) loss.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  if (loss.size() < 100) return INFINITY;
  const double first = std::accumulate(loss.begin(), loss.begin() + 50, 0.0) / 50.0;
  const double last = std::accumulate(loss.end() - 50, loss.end(), 0.0) / 50.0;
  return last / first;
}

DeskRun desk_scale() {
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun d;
  d.work = fs::temp_directory_path() / ("dsmm_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(d.work);
  const fs::path fixtures = DSMM_FIXTURE_DIR;
  const fs::path config = d.work / "desk.json";
  io::atomic_write(config, kDeskConfig);
  d.train_images = static_cast<Index>(io::list_images(fixtures / "train").size());

  auto train_one = [&](std::uint64_t seed, const fs::path& out) {
    std::string log;
    const int code = run_cli({"train", "--config", config.string(), "--data", (fixtures / "train").string(),
                              "--out", out.string(), "--seed", std::to_string(seed)},
                             &log);
    if (code != 0) throw std::runtime_error("train seed " + std::to_string(seed) + " exited " +
                                            std::to_string(code) + ": " + log);
    return io::read_file(out / "loss.csv");
  };

  try {
    std::vector<EvalMatrix> matrices;
    for (std::uint64_t s : d.train_seeds) {
      const fs::path out = d.work / ("dsmm_s" + std::to_string(s));
      d.loss_csv[s] = train_one(s, out);
      d.loss_ratio[s] = loss_ratio_of(d.loss_csv[s]);
      matrices.push_back({"dsmm_s" + std::to_string(s), io::read_matrix(out / "dsmm.bin"), std::nullopt});
    }
    d.rerun_csv = train_one(d.train_seeds.front(), d.work / "rerun");
    for (std::uint64_t s : d.grm_seeds)
      matrices.push_back({"grm_s" + std::to_string(s), generate_grm(measurement_dim(0.25, 8), 64, s),
                          std::nullopt});

    std::vector<NamedImage> images;
    for (const fs::path& p : io::list_images(fixtures / "test"))
      images.push_back({p.stem().string(), io::read_image(p)});
    d.test_images = static_cast<Index>(images.size());

    ComparisonConfig cfg;
    cfg.solver.lambda = 0.01;
    const ComparisonReport report = run_comparison(images, matrices, {0.25}, {Reconstructor::kIsta}, cfg);
    for (const SummaryRow& row : report.summary)
      if (row.kind == SummaryRow::Kind::kMean) d.means[row.matrix] = {row.psnr_db, row.ssim};
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return d;
}

Outcome desk_comparison(const DeskRun& d) {
  Outcome o{true, "", 600.0};
  if (!d.error.empty()) return {false, d.error, 600.0};
  auto average = [&](const char* prefix, const std::vector<std::uint64_t>& seeds, int field) {
    double sum = 0.0;
    for (std::uint64_t s : seeds) {
      const auto& m = d.means.at(prefix + std::to_string(s));
      sum += field == 0 ? m.first : m.second;
    }
    return sum / static_cast<double>(seeds.size());
  };
  const double dsmm_psnr = average("dsmm_s", d.train_seeds, 0), grm_psnr = average("grm_s", d.grm_seeds, 0);
  const double dsmm_ssim = average("dsmm_s", d.train_seeds, 1), grm_ssim = average("grm_s", d.grm_seeds, 1);
  double worst_gain = INFINITY;
  for (std::uint64_t s : d.train_seeds)
    worst_gain = std::min(worst_gain, d.means.at("dsmm_s" + std::to_string(s)).first - grm_psnr);

  const long patches = 500L * 8L;
  o.pass = d.train_images >= 10 && d.test_images >= 5 && dsmm_psnr - grm_psnr >= 0.3 &&
           dsmm_ssim - grm_ssim >= 0.0 && d.seconds < 600.0;
  std::ostringstream s;
  s << d.train_images << " train images / " << patches << " patches, " << d.test_images
    << " test images; DSMM (3 seeds) " << fmt("%.2f", dsmm_psnr) << " dB/" << fmt("%.4f", dsmm_ssim)
    << " vs GRM (5 draws) " << fmt("%.2f", grm_psnr) << " dB/" << fmt("%.4f", grm_ssim) << ": gain "
    << fmt("%+.2f", dsmm_psnr - grm_psnr) << " dB, " << fmt("%+.4f", dsmm_ssim - grm_ssim)
    << " SSIM; worst single seed " << fmt("%+.2f", worst_gain) << " dB";
  o.detail = s.str();
  return o;
}

Outcome training_sanity(const DeskRun& d) {
  if (!d.error.empty()) return {false, d.error};
  Outcome o;
  double worst = 0.0;
  for (const auto& [seed, ratio] : d.loss_ratio) worst = std::max(worst, ratio);
  const bool identical = !d.rerun_csv.empty() && d.rerun_csv == d.loss_csv.at(d.train_seeds.front());
  o.pass = worst < 0.5 && identical;
  o.detail = "final-50/first-50 loss ratio (worst of 3 seeds) " + fmt("%.3f", worst) +
             "; same-seed loss CSV " + (identical ? "byte-identical" : "DIFFERS");
  return o;
}

Outcome metrics() {
  Outcome o;
  const RowMatrixXd zero = RowMatrixXd::Zero(16, 16);
  const double p = psnr(zero, RowMatrixXd::Constant(16, 16, 0.1));
  const RowMatrixXd a = random_image(32, 32, 7);
  const double self = ssim(a, a);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RowMatrixXd x = random_image(24 + seed, 30, seed);
    const RowMatrixXd y = 0.7 * x + 0.3 * random_image(24 + seed, 30, seed + 40);
    worst = std::max(worst, std::abs(ssim(x, y) - testing::naive_ssim(x, y)));
  }
  o.pass = p == 20.0 && std::abs(self - 1.0) <= 1e-15 && worst <= 1e-10;
  o.detail = "psnr(0.1 diff) " + fmt("%.17g", p) + " dB; ssim(a,a) " + fmt("%.17g", self) +
             "; max |ssim - naive| " + fmt("%.2e", worst) + " over 10 pairs";
  return o;
}

Outcome io_checks(const fs::path& work) {
  Outcome o;
  fs::create_directories(work);
  Rng rng = make_rng(5, "init");
  SamplingLayerState layer = SamplingLayerState::random(32, 102, 0.2, rng);
  const MeasurementMatrix m = layer.constrained_matrix();

  const MeasurementMatrix bin = io::decode_matrix(io::encode_matrix(m));
  const bool bin_exact = bin.block_size == m.block_size && bin.provenance == m.provenance &&
                         std::memcmp(&bin.sparsity_degree, &m.sparsity_degree, sizeof(double)) == 0 &&
                         bin.entries.rows() == m.entries.rows() && bin.entries.cols() == m.entries.cols() &&
                         std::memcmp(bin.entries.data(), m.entries.data(),
                                     sizeof(double) * static_cast<size_t>(m.entries.size())) == 0;
  const MeasurementMatrix txt = io::decode_matrix_text(io::encode_matrix_text(m));
  const bool txt_exact = txt.block_size == m.block_size && txt.sparsity_degree == m.sparsity_degree &&
                         txt.entries == m.entries;

  // eval geometry: ratio 0.1 at B=32 needs n_b = floor(102.4) = 102.
  const fs::path images = work / "images";
  fs::create_directories(images);
  io::write_image(images / "a.pgm", random_image(64, 64, 1));
  io::atomic_write(work / "m100.bin", io::encode_matrix(generate_grm(100, 1024, 1)));
  io::atomic_write(work / "m102.bin", io::encode_matrix(generate_grm(102, 1024, 1)));
  auto eval = [&](const char* matrix, const char* out) {
    return run_cli({"eval", "--images", images.string(), "--matrix", (work / matrix).string(), "--ratio",
                    "0.1", "--max-iters", "20", "--no-images", "--out", (work / out).string()});
  };
  const int rejected = eval("m100.bin", "r100.csv");
  const int accepted = eval("m102.bin", "r102.csv");

  o.pass = bin_exact && txt_exact && rejected == cli::kInvalidInput && accepted == cli::kOk;
  o.detail = std::string("DSMM1 ") + (bin_exact ? "bit-exact" : "MISMATCH") + "; sparse text " +
             (txt_exact ? "value-exact" : "MISMATCH") + "; eval n_b=100 exit " + std::to_string(rejected) +
             ", n_b=102 exit " + std::to_string(accepted);
  return o;
}

}  // namespace

int main() {
  cli::tune_allocator();
  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = fn();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.limit_s > 0.0 && s >= o.limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", o.limit_s) + " s budget";
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " (" << fmt("%.2f", s)
              << " s) " << o.detail << std::endl;
  };

  report(1, constraint_invariants);
  report(2, sampling_equivalence);
  report(3, gradient_checks);
  report(4, train_step_update);
  report(5, ista_correctness);
  DeskRun desk;
  report(6, [&] {
    desk = desk_scale();
    return desk_comparison(desk);
  });
  report(7, [&] { return training_sanity(desk); });
  report(8, metrics);
  report(9, [&] { return io_checks(desk.work / "io"); });

  std::error_code ec;
  fs::remove_all(desk.work, ec);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
