#pragma once

#include <map>
#include <string>
#include <vector>

#include "cpnet/cloud.hpp"
#include "cpnet/model.hpp"
#include "cpnet/trainer.hpp"

namespace cpnet {

// Flat `key = value` experiment configuration (# comments). Every key has a
// documented default; unknown keys are rejected; the fully resolved config is
// echoed into the output directory at run start.
class RunConfig {
public:
    // Defaults only.
    RunConfig() = default;

    static RunConfig from_file(const std::string& path);
    static RunConfig from_string(const std::string& text, const std::string& origin = "<string>");

    // One "key = value" line per key in sorted order, including defaults.
    std::string echo() const;
    void write_echo(const std::string& out_path) const;

    // Key/default/help table for --help style listings.
    struct KeyDoc {
        std::string key, def, help;
    };
    static const std::vector<KeyDoc>& documented_keys();

    // Resolved views.
    std::uint64_t seed() const;
    std::string out_dir() const;
    std::vector<std::string> dataset_kinds() const;
    int dataset_count() const;       // clouds per kind
    int dataset_n_points() const;
    double dataset_noise_std() const;
    std::string dataset_dir() const;  // nonempty: read clouds from files instead
    CpNetConfig model() const;
    TrainConfig train() const;

    const std::string& raw(const std::string& key) const;

private:
    std::map<std::string, std::string> values_;  // only overrides; defaults elsewhere
    std::string get(const std::string& key) const;
};

// Generates the dataset the config describes: `count` clouds per kind with
// ids, class labels (kind index) and per-point part labels, normalized into
// the unit sphere. Deterministic in the data substream of `seed`.
struct SyntheticDataset {
    std::vector<PointCloud> clouds;
    std::vector<int> class_labels;   // kind index per cloud
    std::vector<std::string> kinds;  // class id -> kind name
};
SyntheticDataset generate_dataset(const RunConfig& cfg);

}  // namespace cpnet
