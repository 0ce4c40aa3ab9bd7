#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "stam/errors.hpp"
#include "stam/model.hpp"

namespace stam {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'T', 'A', 'M'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename T>
  T get(const char* what) {
    T v;
    bytes(&v, sizeof v, what);
    return v;
  }
  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError("truncated checkpoint " + path_ + " while reading " + what);
    }
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string path_;
};

std::string header_text(const Model& model, const TrainingMeta& meta) {
  std::ostringstream os;
  os.precision(17);
  os << model.config().to_text() << "epoch=" << meta.epoch << "\nloss=" << meta.loss
     << "\nrng_state=" << meta.rng_state << '\n';
  return os.str();
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path, const TrainingMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  Writer w(out);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string header = header_text(model, meta);
  w.put<std::uint64_t>(header.size());
  w.bytes(header.data(), header.size());
  for (const auto& p : model.parameters()) {
    w.put<std::uint64_t>(p.name.size());
    w.bytes(p.name.data(), p.name.size());
    const auto& dims = p.tensor.shape().dims();
    w.put<std::uint64_t>(dims.size());
    for (std::size_t d : dims) w.put<std::uint64_t>(d);
    w.bytes(p.tensor.data().data(), p.tensor.numel() * sizeof(double));
  }
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + " has version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  if (header_len > (1u << 20)) throw FormatError("checkpoint " + path.string() + " has an implausible header");
  std::string header(header_len, '\0');
  r.bytes(header.data(), header.size(), "header");

  Checkpoint ck{Model::build(ModelConfig::from_text(header)), {}};
  std::map<std::string, std::string> kv;
  {
    std::istringstream hs(header);
    std::string line;
    while (std::getline(hs, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  if (kv.count("epoch")) ck.meta.epoch = std::stoull(kv["epoch"]);
  if (kv.count("loss")) ck.meta.loss = std::stod(kv["loss"]);
  ck.meta.rng_state = kv["rng_state"];

  std::map<std::string, Tensor> params;
  for (const auto& p : ck.model.parameters()) params.emplace(p.name, p.tensor);
  std::map<std::string, bool> seen;
  while (!r.at_end()) {
    const auto name_len = r.get<std::uint64_t>("record name length");
    if (name_len > 4096) throw FormatError("checkpoint " + path.string() + " has a corrupt record name");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name.size(), "record name");
    const auto rank = r.get<std::uint64_t>("record rank");
    if (rank == 0 || rank > 8) throw FormatError("checkpoint record " + name + " has invalid rank");
    std::vector<std::size_t> dims;
    for (std::uint64_t i = 0; i < rank; ++i) dims.push_back(r.get<std::uint64_t>("record dims"));
    const auto it = params.find(name);
    if (it == params.end()) throw FormatError("checkpoint has unknown parameter '" + name + "'");
    if (it->second.shape().dims() != dims) {
      throw FormatError("checkpoint parameter '" + name + "' has shape " + Shape(dims).str() + ", model expects " +
                        it->second.shape().str());
    }
    Vector& data = it->second.mutable_data();
    r.bytes(data.data(), static_cast<std::size_t>(data.size()) * sizeof(double), name.c_str());
    seen[name] = true;
  }
  for (const auto& [name, t] : params) {
    if (!seen.count(name)) throw FormatError("checkpoint " + path.string() + " lacks parameter '" + name + "'");
  }
  return ck;
}

}  // namespace stam
