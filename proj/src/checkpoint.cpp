// Checkpoint archive:
//
//   HYDRONET-CKPT\n
//   version = 1\n
//   config_bytes = <n>\n
//   <n bytes of INI text: [model] [train] [norm] [state]>
//   tensors = <k>\n
//   <name> <rows> <cols>\n          (k manifest lines)
//   data\n
//   <raw little-endian float64 buffers, manifest order, row-major>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

#include "csv.hpp"
#include "hydronet/config.hpp"
#include "hydronet/error.hpp"
#include "hydronet/training.hpp"

namespace hydronet {

namespace pt = boost::property_tree;

namespace {

constexpr const char* kMagic = "HYDRONET-CKPT";

void write_le(std::string& out, const RowMatrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(m.data()[i]);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
}

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
  throw Error(ErrorCode::CorruptCheckpoint, path + ": " + why);
}

// Cursor over the whole file.
class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::string line() {
    const auto nl = bytes_.find('\n', pos_);
    if (nl == std::string::npos) corrupt(path_, "truncated header");
    auto s = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return s;
  }

  std::size_t keyed(const std::string& key) {
    const auto s = line();
    const auto prefix = key + " = ";
    long long v = -1;
    if (s.rfind(prefix, 0) != 0 || !csv::parse(std::string_view(s).substr(prefix.size()), v) || v < 0)
      corrupt(path_, "expected '" + key + " = <n>'");
    return static_cast<std::size_t>(v);
  }

  std::string take(std::size_t n) {
    if (bytes_.size() - pos_ < n) corrupt(path_, "truncated payload");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  RowMatrix matrix(Eigen::Index rows, Eigen::Index cols) {
    const auto count = static_cast<std::size_t>(rows * cols);
    const auto raw = take(8 * count);
    RowMatrix m(rows, cols);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[8 * i + b])) << (8 * b);
      m.data()[i] = std::bit_cast<double>(bits);
    }
    return m;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  pt::ptree root;
  root.add_child("model", to_ptree(ckpt.model));
  root.add_child("train", to_ptree(ckpt.train));
  pt::ptree norm;
  norm.put("mode", to_string(ckpt.norm.mode));
  root.add_child("norm", norm);
  pt::ptree state;
  std::ostringstream fp;
  fp << std::hex << ckpt.graph_fingerprint;
  state.put("graph_fingerprint", fp.str());
  state.put("best_val_loss", csv::format(ckpt.best_val_loss));
  state.put("epoch", std::to_string(ckpt.epoch));
  state.put("residuals", ckpt.residuals ? "true" : "false");
  root.add_child("state", state);
  std::ostringstream config;
  pt::write_ini(config, root);
  const auto config_text = config.str();

  std::vector<std::pair<std::string, const RowMatrix*>> tensors;
  for (const auto& p : ckpt.params) tensors.emplace_back(p.name, &p.value);
  const RowMatrix norm_mean = ckpt.norm.mean;
  const RowMatrix norm_std = ckpt.norm.std;
  tensors.emplace_back("norm.mean", &norm_mean);
  tensors.emplace_back("norm.std", &norm_std);
  if (ckpt.residuals) {
    tensors.emplace_back("residual.mean", &ckpt.residuals->mean);
    tensors.emplace_back("residual.std", &ckpt.residuals->std);
  }

  std::string out = std::string(kMagic) + "\n";
  out += "version = " + std::to_string(kCheckpointVersion) + "\n";
  out += "config_bytes = " + std::to_string(config_text.size()) + "\n";
  out += config_text;
  out += "tensors = " + std::to_string(tensors.size()) + "\n";
  for (const auto& [name, m] : tensors)
    out += name + " " + std::to_string(m->rows()) + " " + std::to_string(m->cols()) + "\n";
  out += "data\n";
  for (const auto& [name, m] : tensors) write_le(out, *m);

  auto file = csv::open_out(path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::IoError, "failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::IoError, "cannot open checkpoint '" + path + "'");
  Reader r(std::string(std::istreambuf_iterator<char>(file), {}), path);

  if (r.line() != kMagic) corrupt(path, "not a checkpoint");
  const auto version = r.keyed("version");
  if (version != static_cast<std::size_t>(kCheckpointVersion))
    corrupt(path, "unsupported version " + std::to_string(version));
  const auto config_text = r.take(r.keyed("config_bytes"));

  Checkpoint ckpt;
  try {
    pt::ptree root;
    std::istringstream in(config_text);
    pt::read_ini(in, root);
    ckpt.model = model_from_ptree(root.get_child("model"));
    ckpt.train = train_from_ptree(root.get_child("train"));
    ckpt.norm.mode = parse_norm_mode(root.get<std::string>("norm.mode"));
    ckpt.graph_fingerprint = std::stoull(root.get<std::string>("state.graph_fingerprint"), nullptr, 16);
    if (!csv::parse(root.get<std::string>("state.best_val_loss"), ckpt.best_val_loss))
      corrupt(path, "bad best_val_loss");
    ckpt.epoch = std::stoull(root.get<std::string>("state.epoch"));
    if (root.get<std::string>("state.residuals") == "true") ckpt.residuals.emplace();
    ckpt.model.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptCheckpoint) throw;
    corrupt(path, e.what());
  } catch (const std::exception& e) {
    corrupt(path, std::string("config block: ") + e.what());
  }

  const auto count = r.keyed("tensors");
  std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> manifest;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream line(r.line());
    std::string name;
    long long rows = -1, cols = -1;
    if (!(line >> name >> rows >> cols) || rows < 0 || cols < 0) corrupt(path, "bad manifest line");
    manifest.emplace_back(name, rows, cols);
  }
  if (r.line() != "data") corrupt(path, "missing data marker");

  const auto expected = init_params(ckpt.model);
  for (const auto& [name, rows, cols] : manifest) {
    auto m = r.matrix(rows, cols);
    if (name == "norm.mean") {
      ckpt.norm.mean = m;
    } else if (name == "norm.std") {
      ckpt.norm.std = m;
    } else if (name == "residual.mean" && ckpt.residuals) {
      ckpt.residuals->mean = std::move(m);
    } else if (name == "residual.std" && ckpt.residuals) {
      ckpt.residuals->std = std::move(m);
    } else {
      if (!expected.contains(name)) corrupt(path, "unexpected tensor '" + name + "'");
      const auto& shape = expected.at(name);
      if (shape.rows() != rows || shape.cols() != cols) corrupt(path, "tensor '" + name + "' has the wrong shape");
      ckpt.params.add(name, std::move(m));
    }
  }
  if (!r.done()) corrupt(path, "trailing bytes");
  if (ckpt.params.size() != expected.size()) corrupt(path, "missing parameters");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (ckpt.params[i].name != expected[i].name) corrupt(path, "parameters out of order");
  const auto norm_width = ckpt.norm.mode == NormMode::Global ? 2 : ckpt.norm.mean.size();
  if (ckpt.norm.mean.size() != norm_width || ckpt.norm.std.size() != norm_width || norm_width == 0)
    corrupt(path, "normalization stats missing or malformed");
  if (ckpt.residuals && (ckpt.residuals->mean.size() == 0 || ckpt.residuals->std.size() == 0))
    corrupt(path, "residual stats missing");
  return ckpt;
}

}  // namespace hydronet
