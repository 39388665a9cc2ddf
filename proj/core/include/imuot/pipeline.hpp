#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace imuot::pipeline {

// Flat key/value options; keys are flag names without the leading dashes.
using Options = std::map<std::string, std::string>;

struct OptionSpec {
  std::string name;
  std::string default_value;
  std::string help;
  bool flag = false;      // boolean switch, stored as "true" / "false"
  bool required = false;
};

const std::vector<std::string>& commands();
const std::vector<OptionSpec>& options_for(std::string_view command);

// `key = value` lines; '#' starts a comment.
Options read_config_file(const std::filesystem::path& path);
void write_config_file(const std::filesystem::path& path, const Options& options);

// Inclusive ranges "a..b", lists "a,b,c" or a single index.
std::vector<int> parse_domain_list(std::string_view text);

struct RunManifest {
  std::string command;
  std::string version;
  Options config;
  std::vector<std::pair<std::string, double>> stages;  // wall-clock seconds
  std::map<std::string, std::string> checksums;        // path relative to the output dir -> sha256
  std::filesystem::path output_dir;
};

std::string sha256_file(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

// Where a command writes its manifest. adapt and eval runs are told apart by method (and the
// non-default eval split and metric).
std::string manifest_variant(std::string_view command, const Options& config);
std::filesystem::path manifest_path(std::string_view command, const std::filesystem::path& out,
                                    std::string_view variant = {});

// Resolves a relative output path against IMUOT_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::string& out);

// Runs one subcommand and writes its manifest. Throws the library error types.
RunManifest run(std::string_view command, const Options& options, std::ostream& log);

struct RerunReport {
  RunManifest original;
  RunManifest fresh;
  std::vector<std::string> mismatched;  // emitted files whose checksum changed or vanished
};

// Re-executes the command recorded in a manifest (optionally into another output dir) and
// compares the checksums of the emitted files.
RerunReport rerun(const std::filesystem::path& manifest, const std::optional<std::string>& out,
                  std::ostream& log);

// 0 success, 1 usage, 2 data, 3 numerical.
int exit_code(const std::exception& e);

}  // namespace imuot::pipeline
