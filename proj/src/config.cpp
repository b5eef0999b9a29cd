#include "cpnet/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cpnet/errors.hpp"
#include "cpnet/rng.hpp"

namespace cpnet {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long r = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const std::string& tok : split_csv(v)) out.push_back(static_cast<int>(to_long(key, tok)));
    return out;
}

}  // namespace

const std::vector<RunConfig::KeyDoc>& RunConfig::documented_keys() {
    static const std::vector<KeyDoc> docs = {
        {"seed", "42", "master seed; every random stream derives from it"},
        {"out_dir", "runs/out", "output directory for metrics, checkpoints and echo"},
        {"data.kinds", "sphere,cube,torus", "comma list of shape kinds (class per kind)"},
        {"data.count", "50", "clouds generated per kind"},
        {"data.n_points", "256", "points per cloud"},
        {"data.noise_std", "0.0", "generation noise std (surface roughening)"},
        {"data.dir", "", "when set, load *.xyz clouds from this directory instead"},
        {"model.variant", "segmentation", "classification | segmentation"},
        {"model.points", "", "comma list, points per level (default: N halved per level)"},
        {"model.channels", "", "comma list, channels per level (default preset widths)"},
        {"model.k_neighbors", "16", "kNN size inside RS-Conv grouping"},
        {"model.head_width", "32", "channels of each per-level point-wise head"},
        {"model.weight_mlp_hidden", "16", "hidden width of the relation weight MLP"},
        {"model.fold_hidden", "64", "hidden width of the folding decoder MLPs"},
        {"model.normal_hidden", "64", "hidden width of the normal head"},
        {"model.use_batch_norm", "true", "batch norm in the encoder"},
        {"model.normal_head", "", "normal prediction head (default: on for segmentation)"},
        {"model.relation_abs_coords", "true", "absolute coordinates in RS-Conv relation vectors"},
        {"model.fold_grid_side", "0", "folding lattice side; 0 = ceil(sqrt(N))"},
        {"loss.preset", "segmentation",
         "segmentation | classification | classification_cg2g | basic_only | all"},
        {"loss.tau", "0.1", "contrastive temperature"},
        {"loss.normalize_logits", "true", "l2-normalize features before contrastive dots"},
        {"loss.symmetric_cl", "false", "symmetrized local consistency loss"},
        {"aug.manner", "H", "perturbation manner A..I"},
        {"aug.std", "0.02", "perturbation noise std"},
        {"aug.jitter_count", "-1", "jitter exactly this many top-scored points (-1 = manner)"},
        {"aug.clip", "0", "clamp per-coordinate noise to [-clip, clip]; 0 = off"},
        {"aug.k_graph", "16", "kNN size of the frequency-scoring graph"},
        {"train.epochs", "100", "training epochs"},
        {"train.batch_size", "4", "clouds per step"},
        {"train.lr0", "0.001", "base learning rate"},
        {"train.lr_decay", "0.7", "learning-rate decay factor"},
        {"train.lr_period", "20", "epochs between learning-rate decays"},
        {"train.bn_momentum0", "0.9", "initial batch-norm momentum"},
        {"train.bn_decay", "0.5", "batch-norm momentum decay factor"},
        {"train.bn_period", "20", "epochs between momentum decays"},
        {"train.dual_branch", "true", "false trains the basic branch alone"},
        {"train.checkpoint_every", "0", "epochs between checkpoints; 0 = final only"},
    };
    return docs;
}

std::string RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    for (const KeyDoc& d : documented_keys())
        if (d.key == key) return d.def;
    throw ConfigError("unknown config key '" + key + "'");
}

const std::string& RunConfig::raw(const std::string& key) const {
    static const std::string empty;
    const auto it = values_.find(key);
    return it != values_.end() ? it->second : empty;
}

RunConfig RunConfig::from_string(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool known = false;
        for (const KeyDoc& d : documented_keys()) known |= d.key == key;
        if (!known)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key +
                              "'");
        cfg.values_[key] = value;
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
}

std::string RunConfig::echo() const {
    std::string out;
    for (const KeyDoc& d : documented_keys()) {
        const auto it = values_.find(d.key);
        out += d.key + " = " + (it != values_.end() ? it->second : d.def) + "\n";
    }
    return out;
}

void RunConfig::write_echo(const std::string& out_path) const {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + out_path);
    out << echo();
}

std::uint64_t RunConfig::seed() const {
    return static_cast<std::uint64_t>(to_long("seed", get("seed")));
}

std::string RunConfig::out_dir() const { return get("out_dir"); }
std::vector<std::string> RunConfig::dataset_kinds() const { return split_csv(get("data.kinds")); }
int RunConfig::dataset_count() const { return static_cast<int>(to_long("data.count", get("data.count"))); }
int RunConfig::dataset_n_points() const {
    return static_cast<int>(to_long("data.n_points", get("data.n_points")));
}
double RunConfig::dataset_noise_std() const {
    return to_double("data.noise_std", get("data.noise_std"));
}
std::string RunConfig::dataset_dir() const { return get("data.dir"); }

CpNetConfig RunConfig::model() const {
    const std::string variant_s = get("model.variant");
    CpNetConfig::Variant variant;
    if (variant_s == "segmentation") {
        variant = CpNetConfig::Variant::segmentation;
    } else if (variant_s == "classification") {
        variant = CpNetConfig::Variant::classification;
    } else {
        throw ConfigError("model.variant must be 'classification' or 'segmentation'");
    }
    CpNetConfig cfg = CpNetConfig::preset(variant, dataset_n_points());
    if (!get("model.points").empty()) cfg.points_per_level = to_int_list("model.points", get("model.points"));
    if (!get("model.channels").empty())
        cfg.channels_per_level = to_int_list("model.channels", get("model.channels"));
    cfg.k_neighbors = static_cast<int>(to_long("model.k_neighbors", get("model.k_neighbors")));
    cfg.head_width = static_cast<int>(to_long("model.head_width", get("model.head_width")));
    cfg.weight_mlp_hidden =
        static_cast<int>(to_long("model.weight_mlp_hidden", get("model.weight_mlp_hidden")));
    cfg.fold_hidden = static_cast<int>(to_long("model.fold_hidden", get("model.fold_hidden")));
    cfg.normal_hidden = static_cast<int>(to_long("model.normal_hidden", get("model.normal_hidden")));
    cfg.use_batch_norm = to_bool("model.use_batch_norm", get("model.use_batch_norm"));
    if (!get("model.normal_head").empty())
        cfg.normal_head = to_bool("model.normal_head", get("model.normal_head"));
    cfg.relation_abs_coords =
        to_bool("model.relation_abs_coords", get("model.relation_abs_coords"));
    cfg.fold_grid_side = static_cast<int>(to_long("model.fold_grid_side", get("model.fold_grid_side")));
    return cfg;
}

TrainConfig RunConfig::train() const {
    TrainConfig cfg;
    cfg.epochs = static_cast<int>(to_long("train.epochs", get("train.epochs")));
    cfg.batch_size = static_cast<int>(to_long("train.batch_size", get("train.batch_size")));
    cfg.lr0 = to_double("train.lr0", get("train.lr0"));
    cfg.lr_decay = to_double("train.lr_decay", get("train.lr_decay"));
    cfg.lr_period = static_cast<int>(to_long("train.lr_period", get("train.lr_period")));
    cfg.bn_momentum0 = to_double("train.bn_momentum0", get("train.bn_momentum0"));
    cfg.bn_decay = to_double("train.bn_decay", get("train.bn_decay"));
    cfg.bn_period = static_cast<int>(to_long("train.bn_period", get("train.bn_period")));
    cfg.seed = seed();
    cfg.loss = LossConfig::preset(loss_preset_from_string(get("loss.preset")));
    cfg.loss.tau = to_double("loss.tau", get("loss.tau"));
    cfg.loss.batch_size = cfg.batch_size;
    cfg.loss.normalize_logits = to_bool("loss.normalize_logits", get("loss.normalize_logits"));
    cfg.loss.symmetric_cl = to_bool("loss.symmetric_cl", get("loss.symmetric_cl"));
    const std::string manner_s = get("aug.manner");
    if (manner_s.size() != 1) throw ConfigError("aug.manner must be a single letter A..I");
    try {
        cfg.manner = manner_from_char(manner_s[0]);
    } catch (const InvalidSpec& e) {
        throw ConfigError(e.what());
    }
    cfg.noise_std = to_double("aug.std", get("aug.std"));
    cfg.jitter_count = static_cast<int>(to_long("aug.jitter_count", get("aug.jitter_count")));
    cfg.noise_clip = to_double("aug.clip", get("aug.clip"));
    cfg.k_graph = static_cast<int>(to_long("aug.k_graph", get("aug.k_graph")));
    cfg.dual_branch = to_bool("train.dual_branch", get("train.dual_branch"));
    cfg.checkpoint_every =
        static_cast<int>(to_long("train.checkpoint_every", get("train.checkpoint_every")));
    cfg.out_dir = out_dir();
    if (cfg.loss.has(LossTerm::normal) &&
        !get("model.normal_head").empty() &&
        !to_bool("model.normal_head", get("model.normal_head")))
        throw ConfigError("normal loss enabled but model.normal_head = false");
    return cfg;
}

SyntheticDataset generate_dataset(const RunConfig& cfg) {
    SyntheticDataset out;
    const std::string dir = cfg.dataset_dir();
    if (!dir.empty()) {
        // Directory layout produced by the gen command: index.json + files.
        namespace fs = std::filesystem;
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".xyz") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw FileNotFound("no .xyz clouds in " + dir);
        for (const std::string& f : files) {
            PointCloud c = load_cloud(f, CloudFormat::xyz);
            const std::string parts = fs::path(f).replace_extension(".parts").string();
            if (fs::exists(parts)) {
                std::ifstream in(parts);
                std::vector<int> labels;
                int v;
                while (in >> v) labels.push_back(v);
                if (labels.size() == c.points.size()) c.part_labels = std::move(labels);
            }
            out.clouds.push_back(std::move(c));
            out.class_labels.push_back(0);
        }
        out.kinds = {"file"};
        return out;
    }

    const auto kinds = cfg.dataset_kinds();
    if (kinds.empty()) throw ConfigError("data.kinds is empty");
    const int count = cfg.dataset_count();
    if (count < 1) throw ConfigError("data.count must be >= 1");
    for (std::size_t k = 0; k < kinds.size(); ++k) {
        const ShapeKind kind = shape_kind_from_string(kinds[k]);
        for (int i = 0; i < count; ++i) {
            ShapeSpec spec;
            spec.kind = kind;
            spec.n_points = cfg.dataset_n_points();
            spec.noise_std = cfg.dataset_noise_std();
            spec.seed = substream(cfg.seed(), "data-gen", k, static_cast<std::uint64_t>(i));
            out.clouds.push_back(gen_shape(spec));
            out.class_labels.push_back(static_cast<int>(k));
        }
        out.kinds.push_back(kinds[k]);
    }
    return out;
}

}  // namespace cpnet
