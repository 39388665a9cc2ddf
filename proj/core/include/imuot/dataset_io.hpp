#pragma once

#include <filesystem>

#include "imuot/sim.hpp"

namespace imuot {

// Layout: DIR/dataset.json plus DIR/domain_<k>/{imu.csv, gt.csv, meta.json}.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace imuot
