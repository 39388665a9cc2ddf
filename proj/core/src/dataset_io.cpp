#include "imuot/dataset_io.hpp"

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "imuot/csv.hpp"
#include "imuot/error.hpp"

namespace imuot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

Eigen::Vector3d vec3(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw DataError("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    json doc;
    in >> doc;
    return doc;
  } catch (const json::exception& e) {
    throw DataError("malformed " + path.string() + ": " + e.what());
  }
}

// Streams a numeric CSV with a fixed header into rows of doubles.
template <class F>
void for_each_numeric_row(const fs::path& path, const std::string& expected_header, F&& f) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != expected_header) {
    throw DataError(path.string() + ": expected header '" + expected_header + "'");
  }
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    values.clear();
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto end = comma == std::string::npos ? line.size() : comma;
      values.push_back(parse_double(std::string_view(line).substr(start, end - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    f(values);
  }
}

}  // namespace

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  const DatasetConfig& c = dataset.config;
  json doc = {
      {"format", "imuot-dataset"},
      {"version", 1},
      {"seed", dataset.seed},
      {"seqs_per_domain", c.seqs_per_domain},
      {"train_fraction", c.train_fraction},
      {"gravity", c.gravity},
      {"groundtruth_jitter", c.groundtruth_jitter},
      {"noise_sharing", std::string(noise_sharing_name(c.noise_sharing))},
      {"arena", {c.arena.x_min, c.arena.x_max, c.arena.y_min, c.arena.y_max}},
      {"noise",
       {{"accel_sigma", c.noise.accel_sigma},
        {"gyro_sigma", c.noise.gyro_sigma},
        {"mag_sigma", c.noise.mag_sigma},
        {"accel_bias_range", c.noise.accel_bias_range},
        {"gyro_bias_range", c.noise.gyro_bias_range}}},
      {"train_ids", dataset.train_ids},
      {"test_ids", dataset.test_ids},
  };
  write_json(dir / "dataset.json", doc);

  for (int k = 0; k < kNumDomains; ++k) {
    if (!dataset.sessions[static_cast<std::size_t>(k)]) continue;
    const Session& s = *dataset.sessions[static_cast<std::size_t>(k)];
    const fs::path ddir = dir / ("domain_" + std::to_string(k));
    fs::create_directories(ddir, ec);
    if (ec) throw DataError("cannot create " + ddir.string() + ": " + ec.message());

    CsvWriter imu(ddir / "imu.csv", {"t", "ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"});
    for (const ImuSample& m : s.imu) {
      const double row[10] = {m.t,       m.accel.x(), m.accel.y(), m.accel.z(), m.gyro.x(),
                              m.gyro.y(), m.gyro.z(), m.mag.x(),   m.mag.y(),   m.mag.z()};
      imu.row(row);
    }
    imu.close();

    CsvWriter gt(ddir / "gt.csv", {"t", "x", "y", "phi"});
    for (const TimedPose& p : s.groundtruth) {
      const double row[4] = {p.t, p.pose.x, p.pose.y, p.pose.phi};
      gt.row(row);
    }
    gt.close();

    json meta = {{"domain_index", s.domain.index()},
                 {"offset_cm", s.domain.offset_cm()},
                 {"seed", s.seed},
                 {"noise",
                  {{"accel_sigma", s.noise.accel_sigma},
                   {"gyro_sigma", s.noise.gyro_sigma},
                   {"mag_sigma", s.noise.mag_sigma},
                   {"accel_bias", vec3(s.noise.accel_bias)},
                   {"gyro_bias", vec3(s.noise.gyro_bias)},
                   {"seed", s.noise.seed}}}};
    write_json(ddir / "meta.json", meta);
  }
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  const json doc = read_json(dir / "dataset.json");
  Dataset ds;
  try {
    if (doc.at("format").get<std::string>() != "imuot-dataset") {
      throw DataError(dir.string() + " is not an imuot dataset");
    }
    ds.seed = doc.at("seed").get<std::uint64_t>();
    DatasetConfig& c = ds.config;
    c.seqs_per_domain = doc.at("seqs_per_domain").get<int>();
    c.train_fraction = doc.at("train_fraction").get<double>();
    c.gravity = doc.at("gravity").get<double>();
    c.groundtruth_jitter = doc.at("groundtruth_jitter").get<double>();
    c.noise_sharing = parse_noise_sharing(doc.at("noise_sharing").get<std::string>());
    const auto arena = doc.at("arena").get<std::vector<double>>();
    if (arena.size() != 4) throw DataError("arena must have four entries");
    c.arena = {arena[0], arena[1], arena[2], arena[3]};
    const json& n = doc.at("noise");
    c.noise = {n.at("accel_sigma").get<double>(), n.at("gyro_sigma").get<double>(),
               n.at("mag_sigma").get<double>(), n.at("accel_bias_range").get<double>(),
               n.at("gyro_bias_range").get<double>()};
    ds.train_ids = doc.at("train_ids").get<std::vector<int>>();
    ds.test_ids = doc.at("test_ids").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError("malformed dataset.json: " + std::string(e.what()));
  }

  for (int k = 0; k < kNumDomains; ++k) {
    const fs::path ddir = dir / ("domain_" + std::to_string(k));
    if (!fs::is_directory(ddir)) continue;
    Session s;
    s.domain = DomainIndex(k);
    const json meta = read_json(ddir / "meta.json");
    try {
      if (meta.at("domain_index").get<int>() != k) throw DataError("domain index mismatch in " + ddir.string());
      s.seed = meta.at("seed").get<std::uint64_t>();
      const json& n = meta.at("noise");
      s.noise.accel_sigma = n.at("accel_sigma").get<double>();
      s.noise.gyro_sigma = n.at("gyro_sigma").get<double>();
      s.noise.mag_sigma = n.at("mag_sigma").get<double>();
      s.noise.accel_bias = vec3(n.at("accel_bias"));
      s.noise.gyro_bias = vec3(n.at("gyro_bias"));
      s.noise.seed = n.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw DataError("malformed meta.json in " + ddir.string() + ": " + e.what());
    }

    s.imu.reserve(static_cast<std::size_t>(ds.config.seqs_per_domain) * kSequenceSamples);
    for_each_numeric_row(ddir / "imu.csv", "t,ax,ay,az,gx,gy,gz,mx,my,mz",
                         [&](const std::vector<double>& v) {
                           if (v.size() != 10) throw DataError("imu.csv row must have 10 fields");
                           ImuSample m;
                           m.t = v[0];
                           m.accel = {v[1], v[2], v[3]};
                           m.gyro = {v[4], v[5], v[6]};
                           m.mag = {v[7], v[8], v[9]};
                           s.imu.push_back(m);
                         });
    for_each_numeric_row(ddir / "gt.csv", "t,x,y,phi", [&](const std::vector<double>& v) {
      if (v.size() != 4) throw DataError("gt.csv row must have 4 fields");
      s.groundtruth.push_back({v[0], {v[1], v[2], v[3]}});
    });
    if (s.imu.size() % kSequenceSamples != 0 ||
        s.sequence_count() != ds.config.seqs_per_domain) {
      throw DataError(ddir.string() + ": imu stream length does not match seqs_per_domain");
    }
    for (std::size_t i = 1; i < s.imu.size(); ++i) {
      if (!(s.imu[i].t > s.imu[i - 1].t)) throw DataError(ddir.string() + ": timestamps not increasing");
    }
    ds.sessions[static_cast<std::size_t>(k)] = std::move(s);
  }
  return ds;
}

}  // namespace imuot
