#include "dsmm/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "dsmm/error.hpp"

namespace dsmm::io {
namespace {

class ByteWriter {
 public:
  void magic(const char (&m)[5]) { out_.append(m, 4); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out_ += s; }
  void index(Index v) {
    if (v < 0 || v > static_cast<Index>(UINT32_MAX)) throw FormatError("value does not fit in u32");
    u32(static_cast<std::uint32_t>(v));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

  void magic(const char (&m)[5]) {
    need(4);
    if (std::memcmp(data_.data() + pos_, m, 4) != 0) throw FormatError(what_ + ": bad magic", 0);
    pos_ += 4;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void version(std::uint32_t expected) {
    const size_t at = pos_;
    const std::uint32_t v = u32();
    if (v != expected)
      throw FormatError(what_ + ": unsupported version " + std::to_string(v), static_cast<long long>(at));
  }
  void finish() const {
    if (pos_ != data_.size())
      throw FormatError(what_ + ": trailing bytes", static_cast<long long>(pos_));
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (data_.size() - pos_ < n)
      throw FormatError(what_ + ": truncated file at offset " + std::to_string(pos_),
                        static_cast<long long>(pos_));
  }

  const std::string& data_;
  std::string what_;
  size_t pos_ = 0;
};

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void put_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.index(static_cast<Index>(name.size()));
  w.bytes(name);
  w.index(t.rank());
  for (Index d : t.shape()) w.index(d);
  for (Index i = 0; i < t.size(); ++i) w.f64(t[i]);
}

Tensor get_tensor(ByteReader& r, const std::string& expected_name) {
  const size_t at = r.pos();
  const std::string name = r.bytes(r.u32());
  if (name != expected_name)
    throw FormatError("checkpoint: expected tensor '" + expected_name + "', found '" + name + "'",
                      static_cast<long long>(at));
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad tensor rank", static_cast<long long>(r.pos()));
  Tensor::Shape shape(rank);
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw FormatError("checkpoint: zero extent", static_cast<long long>(r.pos()));
  }
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = r.f64();
  return t;
}

// Tokenizer for the PGM header: whitespace separated, '#' to end of line.
class PgmHeader {
 public:
  explicit PgmHeader(const std::string& data) : data_(data) {}
  std::string token() {
    while (pos_ < data_.size()) {
      if (data_[pos_] == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(data_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
    const size_t start = pos_;
    while (pos_ < data_.size() && !std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
    if (start == pos_) throw FormatError("pgm: truncated header", static_cast<long long>(pos_));
    return data_.substr(start, pos_ - start);
  }
  long number(long lo = 1, long hi = std::numeric_limits<long>::max()) {
    const std::string t = token();
    long v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || v < lo || v > hi)
      throw FormatError("pgm: bad value '" + t + "'", static_cast<long long>(pos_));
    return v;
  }
  size_t pos() const { return pos_; }

 private:
  const std::string& data_;
  size_t pos_ = 0;
};

RowMatrixXd decode_pgm(const std::string& data) {
  PgmHeader h(data);
  const std::string magic = h.token();
  if (magic != "P5" && magic != "P2") throw FormatError("pgm: bad magic", 0);
  const long width = h.number(), height = h.number(), maxval = h.number();
  if (maxval > 65535) throw FormatError("pgm: maxval above 65535");
  RowMatrixXd img(height, width);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (magic == "P2") {
    for (Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(h.number(0, maxval)) * scale;
    return img;
  }
  size_t pos = h.pos() + 1;  // single whitespace after maxval
  const size_t bps = maxval < 256 ? 1 : 2;
  if (data.size() < pos + static_cast<size_t>(img.size()) * bps)
    throw FormatError("pgm: truncated pixel data", static_cast<long long>(data.size()));
  for (Index i = 0; i < img.size(); ++i) {
    unsigned v = static_cast<unsigned char>(data[pos++]);
    if (bps == 2) v = (v << 8) | static_cast<unsigned char>(data[pos++]);
    img.data()[i] = static_cast<double>(v) * scale;
  }
  return img;
}

RowMatrixXd decode_png(const std::string& data) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, data.data(), data.size()))
    throw FormatError(std::string("png: ") + image.message);
  const bool colour = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError(std::string("png: ") + image.message);
  }
  RowMatrixXd img(image.height, image.width);
  for (Index i = 0; i < img.size(); ++i) {
    if (colour) {
      const png_byte* p = &buf[static_cast<size_t>(3 * i)];
      img.data()[i] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
    } else {
      img.data()[i] = buf[static_cast<size_t>(i)] / 255.0;
    }
  }
  return img;
}

std::string encode_png(const RowMatrixXd& image) {
  std::vector<png_byte> pixels(static_cast<size_t>(image.size()));
  for (Index i = 0; i < image.size(); ++i) pixels[static_cast<size_t>(i)] = quantize(image.data()[i]);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.cols());
  png.height = static_cast<png_uint_32>(image.rows());
  png.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png: ") + png.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png: ") + png.message);
  out.resize(size);
  return out;
}

bool has_extension(const fs::path& p, const char* ext) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

}  // namespace

void atomic_write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

RowMatrixXd read_image(const fs::path& path) {
  const std::string data = read_file(path);
  try {
    if (data.size() >= 8 && std::memcmp(data.data(), "\x89PNG", 4) == 0) return decode_png(data);
    return decode_pgm(data);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

std::string encode_pgm(const RowMatrixXd& image) {
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(image.size()));
  for (Index i = 0; i < image.size(); ++i) out.push_back(static_cast<char>(quantize(image.data()[i])));
  return out;
}

void write_image(const fs::path& path, const RowMatrixXd& image) {
  atomic_write(path, has_extension(path, ".png") ? encode_png(image) : encode_pgm(image));
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (has_extension(entry.path(), ".png") || has_extension(entry.path(), ".pgm"))
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return out;
}

std::string encode_matrix(const MeasurementMatrix& m) {
  m.validate();
  ByteWriter w;
  w.magic("DSMM");
  w.u32(1);
  w.index(m.n_b());
  w.index(m.n_B());
  w.index(m.block_size);
  w.f64(m.sparsity_degree);
  w.u8(static_cast<std::uint8_t>(m.provenance));
  for (Index i = 0; i < m.entries.size(); ++i) w.f64(m.entries.data()[i]);
  return w.take();
}

MeasurementMatrix decode_matrix(const std::string& bytes) {
  ByteReader r(bytes, "DSMM1");
  r.magic("DSMM");
  r.version(1);
  MeasurementMatrix m;
  const Index n_b = r.u32();
  const Index n_B = r.u32();
  m.block_size = r.u32();
  m.sparsity_degree = r.f64();
  const size_t prov_at = r.pos();
  const std::uint8_t prov = r.u8();
  if (prov > 2) throw FormatError("DSMM1: bad provenance tag", static_cast<long long>(prov_at));
  m.provenance = static_cast<Provenance>(prov);
  if (n_b < 1 || n_B < 1) throw FormatError("DSMM1: empty matrix", 4);
  m.entries.resize(n_b, n_B);
  for (Index i = 0; i < m.entries.size(); ++i) m.entries.data()[i] = r.f64();
  r.finish();
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("DSMM1: ") + e.what());
  }
  return m;
}

std::string encode_matrix_text(const MeasurementMatrix& m) {
  m.validate();
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", m.sparsity_degree);
  os << m.n_b() << ' ' << m.n_B() << ' ' << m.block_size << ' ' << buf << ' ' << m.nonzeros() << '\n';
  for (Index r = 0; r < m.n_b(); ++r)
    for (Index c = 0; c < m.n_B(); ++c) {
      const double v = m.entries(r, c);
      if (v == 0.0) continue;
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << r << ' ' << c << ' ' << buf << '\n';
    }
  return os.str();
}

MeasurementMatrix decode_matrix_text(const std::string& text) {
  std::istringstream in(text);
  long long n_b = 0, n_B = 0, B = 0, nnz = 0;
  std::string alpha_s;
  if (!(in >> n_b >> n_B >> B >> alpha_s >> nnz)) throw FormatError("sparse text: bad header", 0);
  if (n_b < 1 || n_B < 1 || nnz < 0 || nnz > n_b * n_B)
    throw FormatError("sparse text: inconsistent header", 0);
  MeasurementMatrix m;
  m.block_size = B;
  m.sparsity_degree = std::strtod(alpha_s.c_str(), nullptr);
  m.provenance = Provenance::kImported;
  m.entries = RowMatrixXd::Zero(n_b, n_B);
  long long prev = -1;
  for (long long k = 0; k < nnz; ++k) {
    long long r = 0, c = 0;
    std::string v;
    if (!(in >> r >> c >> v))
      throw FormatError("sparse text: expected " + std::to_string(nnz) + " triples, got " + std::to_string(k),
                        static_cast<long long>(in.tellg()));
    if (r < 0 || r >= n_b || c < 0 || c >= n_B)
      throw FormatError("sparse text: index out of range at triple " + std::to_string(k));
    const long long flat = r * n_B + c;
    if (flat <= prev) throw FormatError("sparse text: triples not in row-major order at " + std::to_string(k));
    prev = flat;
    char* end = nullptr;
    m.entries(r, c) = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') throw FormatError("sparse text: bad value '" + v + "'");
  }
  std::string extra;
  if (in >> extra) throw FormatError("sparse text: more triples than header nnz");
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("sparse text: ") + e.what());
  }
  return m;
}

MeasurementMatrix read_matrix(const fs::path& path) {
  const std::string data = read_file(path);
  try {
    if (data.size() >= 4 && std::memcmp(data.data(), "DSMM", 4) == 0) return decode_matrix(data);
    if (data.size() >= 4 && std::memcmp(data.data(), "DSMN", 4) == 0) {
      Checkpoint ck = decode_checkpoint(data);
      return ck.sampling.constrained_matrix();
    }
    if (!data.empty() && std::isdigit(static_cast<unsigned char>(data[0]))) return decode_matrix_text(data);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
  throw FormatError(path.string() + ": bad magic", 0);
}

std::string encode_checkpoint(const SamplingLayerState& sampling, const ReconstructionParams& recon) {
  ByteWriter w;
  w.magic("DSMN");
  w.u32(1);
  w.index(sampling.block_size());
  w.f64(sampling.alpha());
  w.u8(recon.residual ? 1 : 0);
  const auto tensors = recon.tensors();
  w.index(static_cast<Index>(tensors.size() + 1));
  put_tensor(w, "theta",
             Tensor({sampling.n_b(), sampling.n_B()},
                    Eigen::Map<const Eigen::VectorXd>(sampling.theta().data(), sampling.theta().size())));
  const auto& names = ReconstructionParams::tensor_names();
  for (size_t i = 0; i < tensors.size(); ++i) put_tensor(w, names[i], *tensors[i]);
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  ByteReader r(bytes, "DSMN1");
  r.magic("DSMN");
  r.version(1);
  const Index B = r.u32();
  const double alpha = r.f64();
  const bool residual = r.u8() != 0;
  const size_t count_at = r.pos();
  const auto& names = ReconstructionParams::tensor_names();
  if (r.u32() != names.size() + 1)
    throw FormatError("DSMN1: unexpected tensor count", static_cast<long long>(count_at));
  Tensor theta = get_tensor(r, "theta");
  if (theta.rank() != 2) throw FormatError("DSMN1: theta must be rank 2");
  std::vector<Tensor> params;
  for (const auto& name : names) params.push_back(get_tensor(r, name));
  r.finish();

  try {
    Checkpoint ck{SamplingLayerState(B, Eigen::Map<const RowMatrixXd>(theta.data(), theta.dim(0), theta.dim(1)), alpha),
                  ReconstructionParams::zeros(B, theta.dim(0), params[2].dim(0), residual)};
    auto slots = ck.recon.tensors();
    for (size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i]->same_shape(params[i]))
        throw FormatError("DSMN1: tensor '" + names[i] + "' has shape " + shape_string(params[i].shape()) +
                          ", expected " + shape_string(slots[i]->shape()));
      *slots[i] = std::move(params[i]);
    }
    return ck;
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("DSMN1: ") + e.what());
  }
}

std::string encode_measurements(const MeasurementFile& m) {
  const Tensor& y = m.measurements;
  if (y.rank() != 4 || y.dim(0) != 1) throw DimensionError("measurements", "expected [1, n_b, h, w]");
  ByteWriter w;
  w.magic("DSMY");
  w.u32(1);
  w.index(m.block_size);
  w.index(m.rows);
  w.index(m.cols);
  w.index(y.dim(1));
  w.index(y.dim(2));
  w.index(y.dim(3));
  for (Index i = 0; i < y.size(); ++i) w.f64(y[i]);
  return w.take();
}

MeasurementFile decode_measurements(const std::string& bytes) {
  ByteReader r(bytes, "DSMY1");
  r.magic("DSMY");
  r.version(1);
  MeasurementFile m;
  m.block_size = r.u32();
  m.rows = r.u32();
  m.cols = r.u32();
  const Index n_b = r.u32(), h = r.u32(), w = r.u32();
  if (m.block_size < 1 || n_b < 1 || h < 1 || w < 1) throw FormatError("DSMY1: empty geometry", 4);
  m.measurements = Tensor({1, n_b, h, w});
  for (Index i = 0; i < m.measurements.size(); ++i) m.measurements[i] = r.f64();
  r.finish();
  return m;
}

}  // namespace dsmm::io
