#include "tcube/model.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <mutex>

#include "tcube/error.hpp"
#include "tcube/io.hpp"

namespace tcube {

using nlohmann::json;

ModelKind random_forest_kind();
ModelKind mlp_kind();
ModelKind tempcnn_kind();

namespace {

struct Registry {
  Registry() = default;
  Registry(Registry&& o) noexcept : kinds(std::move(o.kinds)) {}
  std::mutex mutex;
  std::map<std::string, ModelKind> kinds;
};

Registry& registry() {
  static Registry r = [] {
    Registry reg;
    for (auto k : {random_forest_kind(), mlp_kind(), tempcnn_kind()}) reg.kinds.emplace(k.name, std::move(k));
    return reg;
  }();
  return r;
}

bool same_type(const json& a, const json& b) {
  if (a.is_number_integer() || a.is_number_unsigned()) return b.is_number_integer() || b.is_number_unsigned();
  if (a.is_number_float()) return b.is_number();
  return a.type() == b.type();
}

}  // namespace

void register_model_kind(ModelKind kind) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.kinds[kind.name] = std::move(kind);
}

const ModelKind& model_kind(const std::string& name) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  const auto it = r.kinds.find(name);
  if (it == r.kinds.end()) throw ValidationError("unknown model kind '" + name + "'");
  return it->second;
}

std::vector<std::string> model_kinds() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> out;
  for (const auto& [name, k] : r.kinds) out.push_back(name);
  return out;
}

Hyperparams merge_hyperparams(const std::string& kind, const Hyperparams& defaults, const Hyperparams& user) {
  Hyperparams out = defaults;
  if (user.is_null()) return out;
  if (!user.is_object()) throw ValidationError("hyperparameters for " + kind + " must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    if (!defaults.contains(key)) throw ValidationError("unknown hyperparameter '" + key + "' for model kind " + kind);
    if (!same_type(defaults[key], value)) {
      throw ValidationError("hyperparameter '" + key + "' for " + kind + " has the wrong type");
    }
    out[key] = value;
  }
  return out;
}

TrainedModel train_model(const TimeSeriesTable& t, const std::string& kind_name, const Hyperparams& h,
                         std::uint64_t seed) {
  const ModelKind& kind = model_kind(kind_name);
  const Hyperparams resolved = kind.resolve(h);
  TrainedModel m;
  m.kind = kind_name;
  m.labels = t.labels();
  if (m.labels.size() < 2) throw ValidationError("training needs at least 2 labels, table has " + std::to_string(m.labels.size()));
  std::map<std::string, std::size_t> per_label;
  for (const auto& r : t.rows) ++per_label[r.point.label];
  for (const auto& [label, n] : per_label) {
    if (n < 2) throw ValidationError("training needs at least 2 samples per label; '" + label + "' has " + std::to_string(n));
  }
  m.layout = FeatureLayout{t.n_times(), t.n_bands()};
  m.hyperparams = resolved;
  m.norm = fit_normalization(t);

  TrainingData data;
  data.layout = m.layout;
  data.n = t.rows.size();
  data.n_classes = static_cast<int>(m.labels.size());
  data.x.reserve(data.n * m.layout.features());
  for (const auto& r : t.rows) {
    data.x.insert(data.x.end(), r.series.begin(), r.series.end());
    data.y.push_back(static_cast<int>(std::lower_bound(m.labels.begin(), m.labels.end(), r.point.label) - m.labels.begin()));
  }
  normalize_features(data.x, m.norm);
  m.impl = kind.train(data, resolved, seed);
  return m;
}

TrainedModel train_random_forest(const TimeSeriesTable& t, const Hyperparams& h, std::uint64_t seed) {
  return train_model(t, "rf", h, seed);
}
TrainedModel train_mlp(const TimeSeriesTable& t, const Hyperparams& h, std::uint64_t seed) {
  return train_model(t, "mlp", h, seed);
}
TrainedModel train_tempcnn(const TimeSeriesTable& t, const Hyperparams& h, std::uint64_t seed) {
  return train_model(t, "tempcnn", h, seed);
}

ProbMatrix predict_normalized(const TrainedModel& m, std::span<const float> batch, std::size_t n) {
  const std::size_t f = m.layout.features();
  if (batch.size() != n * f) {
    throw ValidationError("predict: batch has " + std::to_string(batch.size()) + " values, expected " +
                          std::to_string(n) + " rows of " + std::to_string(f));
  }
  ProbMatrix out{n, m.labels.size(), std::vector<double>(n * m.labels.size())};
  if (n > 0) m.impl->predict(batch, n, out.values);
  return out;
}

ProbMatrix predict_probs(const TrainedModel& m, std::span<const float> batch, std::size_t n) {
  std::vector<float> x(batch.begin(), batch.end());
  if (x.size() != n * m.layout.features()) {
    throw ValidationError("predict: feature layout mismatch (expected " + std::to_string(m.layout.n_times) + " times x " +
                          std::to_string(m.layout.n_bands) + " bands per row)");
  }
  normalize_features(x, m.norm);
  return predict_normalized(m, x, n);
}

namespace {

constexpr char kMagic[8] = {'T', 'C', 'U', 'B', 'E', 'M', 'D', 'L'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw ValidationError("model file is truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string serialize_model(const TrainedModel& m) {
  const auto blobs = m.impl->blobs();
  json header{{"kind", m.kind},
              {"labels", m.labels},
              {"layout", {{"n_times", m.layout.n_times}, {"n_bands", m.layout.n_bands}}},
              {"hyperparams", m.hyperparams},
              {"norm", {{"q02", m.norm.q02}, {"q98", m.norm.q98}}}};
  header["blobs"] = json::array();
  for (const auto& b : blobs) header["blobs"].push_back(b.size());
  const std::string h = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kModelFormatVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& b : blobs) out += io::encode_f32(b);
  return out;
}

TrainedModel deserialize_model(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw ValidationError("not a model file (bad magic bytes)");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kModelFormatVersion) {
    throw ValidationError("model format version " + std::to_string(version) + " is not supported (this build reads version " +
                          std::to_string(kModelFormatVersion) + ")");
  }
  const auto hlen = take<std::uint64_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw ValidationError("model file is truncated");
  TrainedModel m;
  std::vector<std::size_t> lengths;
  try {
    const json h = json::parse(bytes.substr(pos, hlen));
    m.kind = h.at("kind").get<std::string>();
    m.labels = h.at("labels").get<std::vector<std::string>>();
    m.layout = FeatureLayout{h.at("layout").at("n_times").get<int>(), h.at("layout").at("n_bands").get<int>()};
    m.hyperparams = h.at("hyperparams");
    m.norm.q02 = h.at("norm").at("q02").get<std::vector<float>>();
    m.norm.q98 = h.at("norm").at("q98").get<std::vector<float>>();
    lengths = h.at("blobs").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model file header is malformed: ") + e.what());
  }
  pos += hlen;
  std::vector<std::vector<float>> blobs;
  for (std::size_t len : lengths) {
    if (pos + len * 4 > bytes.size()) throw ValidationError("model file is truncated");
    blobs.push_back(io::decode_f32(bytes.substr(pos, len * 4)));
    pos += len * 4;
  }
  if (pos != bytes.size()) throw ValidationError("model file has trailing bytes");
  if (m.labels.empty()) throw ValidationError("model file has no labels");
  const ModelKind& kind = model_kind(m.kind);
  m.impl = kind.load(m.hyperparams, m.layout, static_cast<int>(m.labels.size()), std::move(blobs));
  return m;
}

void save_model(const TrainedModel& m, const std::filesystem::path& path) { io::write_file_atomic(path, serialize_model(m)); }

TrainedModel load_model(const std::filesystem::path& path) {
  try {
    return deserialize_model(io::read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace tcube
