#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "imuot/error.hpp"
#include "imuot/tracker.hpp"

namespace imuot {

namespace {

constexpr const char* kFormat = "imuot-tracker";
constexpr int kVersion = 1;

nlohmann::json config_to_json(const TrackerConfig& c) {
  return {{"channels", c.channels},
          {"window", c.window},
          {"conv1_channels", c.conv1_channels},
          {"conv2_channels", c.conv2_channels},
          {"kernel", c.kernel},
          {"stride", c.stride},
          {"hidden", c.hidden},
          {"lstm_layers", c.lstm_layers},
          {"latent", c.latent},
          {"regressor_hidden", c.regressor_hidden},
          {"leaky_slope", c.leaky_slope}};
}

TrackerConfig config_from_json(const nlohmann::json& j) {
  TrackerConfig c;
  c.channels = j.at("channels").get<int>();
  c.window = j.at("window").get<int>();
  c.conv1_channels = j.at("conv1_channels").get<int>();
  c.conv2_channels = j.at("conv2_channels").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.stride = j.at("stride").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.lstm_layers = j.at("lstm_layers").get<int>();
  c.latent = j.at("latent").get<int>();
  c.regressor_hidden = j.at("regressor_hidden").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  return c;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const TrackerParams& params = checkpoint.params;
  if (!params.all_finite()) throw NumericalError("refusing to save non-finite parameters");
  nlohmann::json tensors = nlohmann::json::array();
  params.visit([&](const std::string& name, const Matrix& m) {
    // Row-major flattening.
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    }
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
  });
  nlohmann::json doc = {{"format", kFormat},
                        {"version", kVersion},
                        {"head", std::string(head_name(params.config.head))},
                        {"config", config_to_json(params.config)},
                        {"scaler",
                         {{"mean", vector_to_json(checkpoint.scaler.mean)},
                          {"scale", vector_to_json(checkpoint.scaler.scale)}}},
                        {"tensors", tensors}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
    if (doc.at("format").get<std::string>() != kFormat) {
      throw DataError("not a tracker checkpoint: " + path.string());
    }
    if (doc.at("version").get<int>() != kVersion) {
      throw DataError("unsupported checkpoint version in " + path.string());
    }
    TrackerConfig cfg = config_from_json(doc.at("config"));
    cfg.head = parse_head(doc.at("head").get<std::string>());
    Checkpoint ck;
    ck.params = TrackerParams::zeros(cfg);
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& t : doc.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    ck.params.visit([&](const std::string& name, Matrix& m) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + name);
      const nlohmann::json& t = *it->second;
      if (t.at("rows").get<Eigen::Index>() != m.rows() ||
          t.at("cols").get<Eigen::Index>() != m.cols()) {
        throw DataError("checkpoint tensor " + name + " has the wrong shape");
      }
      const auto data = t.at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != m.size()) {
        throw DataError("checkpoint tensor " + name + " has the wrong size");
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[k++];
      }
    });
    ck.scaler.mean = vector_from_json(doc.at("scaler").at("mean"));
    ck.scaler.scale = vector_from_json(doc.at("scaler").at("scale"));
    if (ck.scaler.mean.size() != cfg.channels || ck.scaler.scale.size() != cfg.channels) {
      throw DataError("checkpoint scaler does not match the channel count");
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace imuot
