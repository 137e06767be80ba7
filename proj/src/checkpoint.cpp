#include "metavqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "metavqa/config_json.hpp"
#include "metavqa/error.hpp"
#include "metavqa/hash.hpp"

namespace mvqa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian hosts");

namespace {

constexpr char kMagic[8] = {'M', 'V', 'Q', 'A', 'C', 'K', 'P', 'T'};

template <class U>
void put(std::string& buf, U v) {
  char raw[sizeof(U)];
  std::memcpy(raw, &v, sizeof(U));
  buf.append(raw, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, data_.data() + at_, sizeof(U));
    at_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(at_, n);
    at_ += n;
    return s;
  }
  std::size_t offset() const { return at_; }
  std::size_t remaining() const { return data_.size() - at_; }
  const std::string& data() const { return data_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw DataError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string data_;
  std::size_t at_ = 0;
};

template <class T>
AnyModel read_params(Reader& r, const ModelConfig& cfg, std::uint64_t n) {
  std::vector<T> params(n);
  const auto raw = r.bytes(n * sizeof(T), "parameters");
  std::memcpy(params.data(), raw.data(), raw.size());
  return Transformer<T>(cfg, std::move(params));
}

}  // namespace

const ModelConfig& config_of(const AnyModel& model) {
  return std::visit([](const auto& m) -> const ModelConfig& { return m.config(); }, model);
}

void save_checkpoint(const AnyModel& model, const std::filesystem::path& path, const nlohmann::json& metadata) {
  std::string buf(kMagic, sizeof kMagic);
  put<std::uint32_t>(buf, kCheckpointVersion);
  std::visit(
      [&](const auto& m) {
        using T = typename std::decay_t<decltype(m)>::Scalar;
        nlohmann::json tensors = nlohmann::json::array();
        for (const auto& t : m.layout().tensors()) tensors.push_back({t.name, t.rows, t.cols});
        nlohmann::json header = {{"config", m.config()},
                                 {"scalar", sizeof(T) == 4 ? "f32" : "f64"},
                                 {"tensors", std::move(tensors)},
                                 {"metadata", metadata}};
        const auto text = header.dump();
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(text.size()));
        buf += text;
        const auto params = m.parameters();
        put<std::uint64_t>(buf, params.size());
        buf.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(T));
      },
      model);
  put<std::uint64_t>(buf, fnv1a(buf));

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());

  if (r.bytes(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = r.get<std::uint32_t>("header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(header_len, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg = header.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  const std::string scalar = header.value("scalar", "");
  cfg.precision = scalar == "f64" ? Precision::kFloat64 : Precision::kFloat32;
  cfg.validate();

  // Shapes recorded in the file must agree with what the config implies.
  const ParameterLayout layout(cfg);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != layout.tensors().size()) {
    throw DimensionError("checkpoint tensor count " + std::to_string(tensors.size()) +
                         " does not match config (" + std::to_string(layout.tensors().size()) + ")");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = layout[i];
    const auto name = tensors[i].at(0).get<std::string>();
    const int rows = tensors[i].at(1).get<int>();
    const int cols = tensors[i].at(2).get<int>();
    if (name != t.name || rows != t.rows || cols != t.cols) {
      throw DimensionError("checkpoint tensor " + name + " [" + std::to_string(rows) + "x" + std::to_string(cols) +
                           "] does not match config shape " + t.name + " [" + std::to_string(t.rows) + "x" +
                           std::to_string(t.cols) + "]");
    }
  }

  const auto n = r.get<std::uint64_t>("parameter count");
  if (n != layout.total()) throw DimensionError("checkpoint parameter count does not match config");
  AnyModel model = cfg.precision == Precision::kFloat64 ? read_params<double>(r, cfg, n)
                                                        : read_params<float>(r, cfg, n);
  const auto body_len = r.offset();
  const auto checksum = r.get<std::uint64_t>("checksum");
  if (r.remaining() != 0) throw DataError("trailing bytes after checkpoint checksum");
  if (checksum != fnv1a(std::string_view(r.data()).substr(0, body_len))) {
    throw DataError("checkpoint checksum mismatch: " + path.string());
  }
  return {std::move(model), header.value("metadata", nlohmann::json::object())};
}

}  // namespace mvqa
