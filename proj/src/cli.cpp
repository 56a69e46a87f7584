#include "dsmm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <ostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "dsmm/config.hpp"
#include "dsmm/evaluation.hpp"
#include "dsmm/gradcheck.hpp"
#include "dsmm/io.hpp"
#include "dsmm/trainer.hpp"

namespace dsmm::cli {
namespace {

namespace fs = std::filesystem;

// Flags for every subcommand, filled by CLI11.
struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
};

struct SampleArgs {
  std::string image, matrix, out, pad = "replicate";
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct SolverArgs {
  double lambda = 0.01;
  int max_iters = 500;
  double rel_tol = 1e-6;
  bool plain_ista = false;

  SolverConfig config() const {
    SolverConfig c;
    c.lambda = lambda;
    c.max_iters = max_iters;
    c.rel_tol = rel_tol;
    c.accelerated = !plain_ista;
    return c;
  }
};

struct ReconstructArgs {
  std::string measurements, matrix, checkpoint, out, solver = "ista";
  SolverArgs solver_args;
};

struct EvalArgs {
  std::string images, out, pad = "replicate";
  std::vector<std::string> matrices, checkpoints, solvers{"ista"};
  std::vector<double> ratios;
  SolverArgs solver_args;
  bool no_images = false;
};

struct MatrixArgs {
  std::string in, out, format;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  bool inject_fault = false;
};

struct GrmArgs {
  double ratio = 0.1;
  Index block = 32;
  std::uint64_t seed = 0;
  std::string out, format;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream os;
  os << std::put_time(std::gmtime(&t), "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

PadMode parse_pad(const std::string& s) {
  if (s == "replicate") return PadMode::kReplicate;
  if (s == "crop") return PadMode::kCrop;
  throw ValidationError("--pad: expected replicate or crop");
}

bool wants_text(const std::string& format, const fs::path& out) {
  if (format == "text") return true;
  if (format == "binary") return false;
  if (!format.empty()) throw ValidationError("--format: expected binary or text");
  return out.extension() == ".txt";
}

void write_matrix(const fs::path& path, const MeasurementMatrix& m, bool text) {
  io::atomic_write(path, text ? io::encode_matrix_text(m) : io::encode_matrix(m));
}

// Reading inputs: anything missing or unreadable maps to exit code 2.
std::vector<NamedImage> load_image_dir(const std::string& dir) {
  if (dir.empty()) throw IoError("no image directory given");
  std::vector<NamedImage> images;
  for (const fs::path& p : io::list_images(dir)) {
    try {
      images.push_back({p.stem().string(), io::read_image(p)});
    } catch (const FormatError& e) {
      throw IoError(std::string("unreadable image ") + e.what());
    }
  }
  if (images.empty()) throw IoError("no .png/.pgm images in " + dir);
  return images;
}

MeasurementMatrix load_matrix(const std::string& path) {
  if (!fs::exists(path)) throw IoError("matrix file not found: " + path);
  return io::read_matrix(path);
}

io::Checkpoint load_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
  return io::decode_checkpoint(io::read_file(path));
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    std::string text;
    try {
      text = io::read_file(a.config);
    } catch (const IoError& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
    cfg = parse_train_config(text);
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();

  if (a.data.empty()) throw IoError("no data directory given (--data)");
  std::error_code ec;
  if (!fs::is_directory(a.data, ec)) throw IoError("data directory not found: " + a.data);
  std::vector<RowMatrixXd> pixels;
  for (auto& img : load_image_dir(a.data)) pixels.push_back(std::move(img.pixels));
  const PatchDataset dataset(std::move(pixels));

  const fs::path dir = a.out;
  fs::create_directories(dir);
  std::ostringstream log;
  log << "start " << timestamp() << "\n";

  TrainCallbacks callbacks;
  double epoch_sum = 0.0;
  int epoch_count = 0;
  callbacks.on_iteration = [&](const LossRecord& r) {
    epoch_sum += r.loss;
    ++epoch_count;
    if (epoch_count == cfg.iters_per_epoch) {
      out << "epoch " << r.epoch << " lr " << r.lr << " mean loss " << epoch_sum / epoch_count << "\n";
      epoch_sum = 0.0;
      epoch_count = 0;
    }
  };
  callbacks.on_checkpoint = [&](int epoch, SamplingLayerState& s, const ReconstructionParams& r) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_epoch%03d.dsmn", epoch);
    io::atomic_write(dir / name, io::encode_checkpoint(s, r));
  };

  TrainResult result = train(dataset, cfg, callbacks);

  std::ostringstream csv;
  csv << "iteration,epoch,lr,loss\n";
  for (const LossRecord& r : result.history)
    csv << r.iteration << ',' << r.epoch << ',' << fmt_double(r.lr) << ',' << fmt_double(r.loss) << '\n';

  const MeasurementMatrix& dsmm = result.sampling.constrained_matrix();
  io::atomic_write(dir / "model.dsmn", io::encode_checkpoint(result.sampling, result.recon));
  write_matrix(dir / "dsmm.bin", dsmm, false);
  write_matrix(dir / "dsmm.txt", dsmm, true);
  io::atomic_write(dir / "loss.csv", csv.str());
  io::atomic_write(dir / "config.json", train_config_json(cfg));
  log << "end " << timestamp() << "\n";
  io::atomic_write(dir / "run.log", log.str());
  out << "wrote " << (dir / "model.dsmn").string() << " (n_b=" << dsmm.n_b() << ", n_B=" << dsmm.n_B()
      << ", nnz=" << dsmm.nonzeros() << ")\n";
  return kOk;
}

int cmd_sample(const SampleArgs& a, std::ostream& out) {
  const MeasurementMatrix phi = load_matrix(a.matrix);
  if (!fs::exists(a.image)) throw IoError("image not found: " + a.image);
  const RowMatrixXd img = io::read_image(a.image);
  const Blockified padded = blockify(img, phi.block_size, parse_pad(a.pad));
  io::MeasurementFile file;
  file.block_size = phi.block_size;
  file.rows = padded.rows;
  file.cols = padded.cols;
  file.measurements = sample_image(as_tensor(padded.image), phi, a.noise_sigma, a.seed);
  io::atomic_write(a.out, io::encode_measurements(file));
  out << "wrote " << a.out << " " << shape_string(file.measurements.shape()) << "\n";
  return kOk;
}

int cmd_reconstruct(const ReconstructArgs& a, std::ostream& out) {
  const MeasurementMatrix phi = load_matrix(a.matrix);
  if (!fs::exists(a.measurements)) throw IoError("measurement file not found: " + a.measurements);
  const io::MeasurementFile file = io::decode_measurements(io::read_file(a.measurements));
  if (file.block_size != phi.block_size || file.measurements.dim(1) != phi.n_b())
    throw ValidationError("measurement geometry (B=" + std::to_string(file.block_size) +
                          ", n_b=" + std::to_string(file.measurements.dim(1)) +
                          ") does not match matrix (B=" + std::to_string(phi.block_size) +
                          ", n_b=" + std::to_string(phi.n_b()) + ")");
  Tensor image;
  if (a.solver == "ista") {
    image = reconstruct_image(file.measurements, phi, a.solver_args.config());
  } else if (a.solver == "learned") {
    if (a.checkpoint.empty()) throw ValidationError("--solver learned requires --checkpoint");
    io::Checkpoint ck = load_checkpoint(a.checkpoint);
    if (ck.sampling.constrained_matrix().entries != phi.entries)
      throw ValidationError("checkpoint was not trained with this matrix");
    image = reconstruct_learned(file.measurements, ck.recon);
  } else {
    throw ValidationError("--solver: expected ista or learned");
  }
  io::write_image(a.out, unblockify(as_image(image), file.rows, file.cols));
  out << "wrote " << a.out << "\n";
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::vector<Reconstructor> recons;
  for (const auto& s : a.solvers) {
    if (s == "ista")
      recons.push_back(Reconstructor::kIsta);
    else if (s == "learned")
      recons.push_back(Reconstructor::kLearned);
    else
      throw ValidationError("--solver: expected ista or learned, got " + s);
  }
  if (a.ratios.empty()) throw ValidationError("--ratio: at least one ratio is required");
  if (a.matrices.empty()) throw ValidationError("--matrix: at least one matrix is required");

  // Labels are file stems, qualified by the parent directory when stems collide.
  std::vector<EvalMatrix> matrices;
  for (const auto& path : a.matrices) {
    const fs::path p(path);
    const auto same_stem = std::count_if(a.matrices.begin(), a.matrices.end(), [&](const std::string& q) {
      return fs::path(q).stem() == p.stem();
    });
    std::string label = p.stem().string();
    if (same_stem > 1) label = fs::absolute(p).parent_path().filename().string() + "/" + label;
    matrices.push_back({label, load_matrix(path), std::nullopt});
  }
  for (const auto& path : a.checkpoints) {
    io::Checkpoint ck = load_checkpoint(path);
    const MeasurementMatrix& phi = ck.sampling.constrained_matrix();
    for (auto& m : matrices)
      if (m.matrix.block_size == phi.block_size && m.matrix.entries.rows() == phi.n_b() &&
          m.matrix.entries == phi.entries)
        m.learned = ck.recon;
  }
  const std::vector<NamedImage> images = load_image_dir(a.images);

  ComparisonConfig cfg;
  cfg.solver = a.solver_args.config();
  cfg.pad = parse_pad(a.pad);
  cfg.keep_reconstructions = !a.no_images;
  const ComparisonReport report = run_comparison(images, matrices, a.ratios, recons, cfg);

  const fs::path report_path = a.out;
  const fs::path dir = report_path.has_parent_path() ? report_path.parent_path() : fs::path(".");
  const std::string stem = report_path.stem().string();
  io::atomic_write(report_path, report_csv(report));
  io::atomic_write(dir / (stem + "_summary.csv"), summary_csv(report));
  io::atomic_write(dir / (stem + ".config.json"), report.config_echo + "\n");
  if (!a.no_images) {
    for (const auto& row : report.rows) {
      std::ostringstream name;
      name << row.image << "__" << row.matrix << "__r" << row.ratio << "__" << to_string(row.reconstructor)
           << ".pgm";
      std::string file = name.str();
      std::replace(file.begin(), file.end(), '/', '_');
      io::write_image(dir / (stem + "_images") / file, row.reconstruction);
    }
  }
  out << summary_csv(report);
  return kOk;
}

int cmd_export(const MatrixArgs& a, std::ostream& out) {
  const MeasurementMatrix m = load_matrix(a.in);
  const bool text = wants_text(a.format, a.out);
  write_matrix(a.out, m, text);
  out << "wrote " << a.out << " (" << (text ? "sparse text" : "DSMM1") << ", nnz=" << m.nonzeros() << ")\n";
  return kOk;
}

int cmd_import(const MatrixArgs& a, std::ostream& out) {
  MeasurementMatrix m = load_matrix(a.in);
  write_matrix(a.out, m, wants_text(a.format, a.out));
  out << "wrote " << a.out << " (n_b=" << m.n_b() << ", n_B=" << m.n_B() << ", provenance "
      << to_string(m.provenance) << ")\n";
  return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradcheckOptions opts;
  opts.corrupt_backward = a.inject_fault;
  const GradcheckReport report = run_gradcheck(a.seed, opts);
  for (const auto& g : report.groups)
    out << std::left << std::setw(16) << g.group << " max rel error " << std::scientific
        << std::setprecision(3) << g.relative_error << "\n";
  out << std::defaultfloat;
  if (!report.passed) {
    out << "FAIL: worst offender " << report.worst.group << " (" << report.worst.relative_error
        << " >= " << opts.tolerance << ")\n";
    return kGradcheckFailed;
  }
  out << "PASS (tolerance " << opts.tolerance << ")\n";
  return kOk;
}

int cmd_gen_grm(const GrmArgs& a, std::ostream& out) {
  const Index n_b = measurement_dim(a.ratio, a.block);
  const MeasurementMatrix m = generate_grm(n_b, a.block * a.block, a.seed);
  write_matrix(a.out, m, wants_text(a.format, a.out));
  out << "wrote " << a.out << " (n_b=" << n_b << ", n_B=" << a.block * a.block << ")\n";
  return kOk;
}

void add_solver_flags(CLI::App* cmd, SolverArgs& s) {
  cmd->add_option("--lambda", s.lambda, "l1 weight")->capture_default_str();
  cmd->add_option("--max-iters", s.max_iters, "solver iteration cap")->capture_default_str();
  cmd->add_option("--rel-tol", s.rel_tol, "relative change stopping tolerance")->capture_default_str();
  cmd->add_flag("--plain-ista", s.plain_ista, "disable FISTA acceleration");
}

}  // namespace

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned sparse block measurement matrices: training, sampling, recovery"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "jointly train the sampling layer and reconstructor");
  train_cmd->add_option("--config", train_args.config, "JSON training config");
  train_cmd->add_option("--data", train_args.data, "directory of grayscale PNG/PGM images");
  train_cmd->add_option("--out", train_args.out, "output directory")->required();
  train_cmd->add_option("--seed", train_args.seed, "overrides the config seed");

  SampleArgs sample_args;
  auto* sample_cmd = app.add_subcommand("sample", "block-sample an image");
  sample_cmd->add_option("--image", sample_args.image)->required();
  sample_cmd->add_option("--matrix", sample_args.matrix)->required();
  sample_cmd->add_option("--out", sample_args.out, "DSMY1 measurement file")->required();
  sample_cmd->add_option("--noise-sigma", sample_args.noise_sigma)->capture_default_str();
  sample_cmd->add_option("--seed", sample_args.seed)->capture_default_str();
  sample_cmd->add_option("--pad", sample_args.pad, "replicate or crop")->capture_default_str();

  ReconstructArgs recon_args;
  auto* recon_cmd = app.add_subcommand("reconstruct", "recover an image from measurements");
  recon_cmd->add_option("--measurements", recon_args.measurements)->required();
  recon_cmd->add_option("--matrix", recon_args.matrix)->required();
  recon_cmd->add_option("--solver", recon_args.solver, "ista or learned")->capture_default_str();
  recon_cmd->add_option("--checkpoint", recon_args.checkpoint, "DSMN1 checkpoint for --solver learned");
  recon_cmd->add_option("--out", recon_args.out, "output image (.pgm or .png)")->required();
  add_solver_flags(recon_cmd, recon_args.solver_args);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "compare measurement matrices on a set of images");
  eval_cmd->add_option("--images", eval_args.images)->required();
  eval_cmd->add_option("--matrix", eval_args.matrices, "matrix files (repeatable)")->required();
  eval_cmd->add_option("--ratio", eval_args.ratios, "sampling ratios (repeatable)")->required();
  eval_cmd->add_option("--solver", eval_args.solvers, "ista and/or learned")->capture_default_str();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoints, "checkpoints for learned reconstruction");
  eval_cmd->add_option("--out", eval_args.out, "report CSV path")->required();
  eval_cmd->add_option("--pad", eval_args.pad, "replicate or crop")->capture_default_str();
  eval_cmd->add_flag("--no-images", eval_args.no_images, "skip writing reconstructed images");
  add_solver_flags(eval_cmd, eval_args.solver_args);

  MatrixArgs export_args;
  auto* export_cmd = app.add_subcommand("export-matrix", "write a matrix or checkpoint's DSMM");
  export_cmd->add_option("--in", export_args.in, "DSMM1, DSMN1 or sparse text")->required();
  export_cmd->add_option("--out", export_args.out)->required();
  export_cmd->add_option("--format", export_args.format, "binary or text (default from extension)");

  MatrixArgs import_args;
  auto* import_cmd = app.add_subcommand("import-matrix", "convert an external matrix into DSMM1");
  import_cmd->add_option("--in", import_args.in, "sparse text or DSMM1")->required();
  import_cmd->add_option("--out", import_args.out)->required();
  import_cmd->add_option("--format", import_args.format, "binary or text (default from extension)");

  GradcheckArgs gc_args;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every backward path");
  gc_cmd->add_option("--seed", gc_args.seed)->capture_default_str();
  gc_cmd->add_flag("--inject-fault", gc_args.inject_fault)->group("");

  GrmArgs grm_args;
  auto* grm_cmd = app.add_subcommand("gen-grm", "generate a row-normalized Gaussian matrix");
  grm_cmd->add_option("--ratio", grm_args.ratio)->capture_default_str();
  grm_cmd->add_option("--block", grm_args.block)->capture_default_str();
  grm_cmd->add_option("--seed", grm_args.seed)->capture_default_str();
  grm_cmd->add_option("--out", grm_args.out)->required();
  grm_cmd->add_option("--format", grm_args.format, "binary or text (default from extension)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kInvalidInput;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out);
    if (*sample_cmd) return cmd_sample(sample_args, out);
    if (*recon_cmd) return cmd_reconstruct(recon_args, out);
    if (*eval_cmd) return cmd_eval(eval_args, out);
    if (*export_cmd) return cmd_export(export_args, out);
    if (*import_cmd) return cmd_import(import_args, out);
    if (*gc_cmd) return cmd_gradcheck(gc_args, out);
    if (*grm_cmd) return cmd_gen_grm(grm_args, out);
  } catch (const NonFiniteLoss& e) {
    err << "error: " << e.what() << "\n";
    return kNonFiniteLoss;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kUnreadableData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kUnreadableData;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  }
  return kInvalidInput;
}

}  // namespace dsmm::cli
