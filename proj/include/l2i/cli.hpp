#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "l2i/config.hpp"
#include "l2i/data.hpp"

namespace l2i {

/// Exit codes: 0 success, 1 domain error, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Scene spec named by the config, or the built-in table when empty.
SceneSpec spec_for(const RunConfig& cfg);

/// Training samples use stream indices [0, n_train); held-out samples follow.
std::vector<SceneSample> training_set(const RunConfig& cfg, const SceneSpec& spec);
std::vector<SceneSample> held_out_set(const RunConfig& cfg, const SceneSpec& spec);

struct VariantResult {
  std::string name;
  std::uint64_t seed = 0;
  bool context_bridge = true;
  bool fg_aware = true;
  double final_loss = 0.0;
  double faithfulness = 0.0;
  double coherence = 0.0;
  double frechet = 0.0;
  double train_seconds = 0.0;
  double sample_seconds = 0.0;
};

/// "full", "no-cb", "no-fg" or "no-cb-no-fg".
std::string variant_name(bool context_bridge, bool fg_aware);

/// Trains one architecture from cfg, samples the held-out layouts and scores
/// them. Checkpoint, logs, metrics and a few sample PNGs go to out_dir.
VariantResult run_variant(const RunConfig& cfg, const std::vector<SceneSample>& train,
                          const std::vector<SceneSample>& held_out, const SceneSpec& spec,
                          const std::filesystem::path& out_dir, std::ostream* log = nullptr);

void write_variant_csv(const std::filesystem::path& path, const std::vector<VariantResult>& rows);

/// Writes the effective config and its hashes as <dir>/config.json.
void echo_config(const std::filesystem::path& dir, const RunConfig& cfg);

}  // namespace l2i
