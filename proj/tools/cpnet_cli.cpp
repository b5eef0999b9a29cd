// Command-line surface for the CP-Net pipeline: synthetic data generation,
// contour/content decomposition, perturbation, self-supervised pre-training,
// frozen-feature probes and a gradient check.
//
// Exit codes: 0 ok, 2 usage/config error, 3 I/O failure, 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpnet/cloud.hpp"
#include "cpnet/config.hpp"
#include "cpnet/disentangle.hpp"
#include "cpnet/errors.hpp"
#include "cpnet/losses.hpp"
#include "cpnet/rng.hpp"
#include "cpnet/trainer.hpp"

using namespace cpnet;

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

std::string cloud_file_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "cloud_%04d", index);
    return buf;
}

PointCloud subset_cloud(const PointCloud& src, const std::vector<int>& idx) {
    PointCloud out;
    out.id = src.id;
    for (const int i : idx) out.points.push_back(src.points[static_cast<std::size_t>(i)]);
    if (src.normals) {
        std::vector<Vec3> n;
        for (const int i : idx) n.push_back((*src.normals)[static_cast<std::size_t>(i)]);
        out.normals = std::move(n);
    }
    if (src.part_labels) {
        std::vector<int> l;
        for (const int i : idx) l.push_back((*src.part_labels)[static_cast<std::size_t>(i)]);
        out.part_labels = std::move(l);
    }
    return out;
}

int cmd_gen(const std::string& kind_s, int n, int count, std::uint64_t seed, double noise_std,
            const std::string& out_dir) {
    const ShapeKind kind = shape_kind_from_string(kind_s);
    fs::create_directories(out_dir);
    ordered_json index = ordered_json::array();
    for (int i = 0; i < count; ++i) {
        ShapeSpec spec;
        spec.kind = kind;
        spec.n_points = n;
        spec.noise_std = noise_std;
        spec.seed = substream(seed, "gen", static_cast<std::uint64_t>(i));
        const PointCloud cloud = gen_shape(spec);
        const std::string base = cloud_file_name(i);
        save_cloud(cloud, out_dir + "/" + base + ".xyz", CloudFormat::xyz);
        std::ofstream parts(out_dir + "/" + base + ".parts");
        if (!parts) throw IoError("cannot write part labels");
        for (const int l : *cloud.part_labels) parts << l << "\n";
        ordered_json rec;
        rec["file"] = base + ".xyz";
        rec["parts_file"] = base + ".parts";
        rec["kind"] = kind_s;
        rec["class"] = 0;
        index.push_back(rec);
    }
    std::ofstream idx(out_dir + "/index.json");
    if (!idx) throw IoError("cannot write index.json");
    idx << index.dump(2) << "\n";
    std::cout << "wrote " << count << " " << kind_s << " clouds to " << out_dir << "\n";
    return kExitOk;
}

int cmd_decompose(const std::string& in, int k_graph, const std::string& out_contour,
                  const std::string& out_content, const std::string& report_path) {
    const PointCloud cloud = load_cloud(in, format_from_path(in));
    const DisentangledCloud d = disentangle(cloud, k_graph);
    save_cloud(subset_cloud(cloud, d.contour_idx), out_contour, format_from_path(out_contour));
    save_cloud(subset_cloud(cloud, d.content_idx), out_content, format_from_path(out_content));
    ordered_json rep;
    rep["n"] = cloud.points.size();
    rep["k_graph"] = k_graph;
    rep["m"] = d.contour_idx.size();
    rep["contour_idx"] = d.contour_idx;
    rep["content_idx"] = d.content_idx;
    if (d.dropped_idx) rep["dropped_idx"] = *d.dropped_idx;
    rep["scores"] = d.scores.scores;
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw IoError("cannot write " + report_path);
        out << rep.dump(2) << "\n";
    }
    std::cout << "contour -> " << out_contour << ", content -> " << out_content << "\n";
    return kExitOk;
}

int cmd_perturb(const std::string& in, const std::string& manner_s, double std_dev,
                std::uint64_t seed, int k_graph, double clip, const std::string& out) {
    if (manner_s.size() != 1) throw InvalidSpec("manner must be a single letter A..I");
    const Manner manner = manner_from_char(manner_s[0]);
    const PointCloud cloud = load_cloud(in, format_from_path(in));
    const DisentangledCloud d = disentangle(cloud, k_graph);
    const PerturbedCloud p = perturb(d, manner, std_dev, seed, clip);
    PointCloud result;
    result.id = cloud.id + "-perturbed";
    result.points = p.points;
    save_cloud(result, out, format_from_path(out));
    std::cout << "manner " << manner_s << " std " << std_dev << " -> " << out << " ("
              << p.points.size() << " points)\n";
    return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& resume_path) {
    const RunConfig cfg = RunConfig::from_file(config_path);
    const SyntheticDataset data = generate_dataset(cfg);
    const CpNetConfig mcfg = cfg.model();
    const TrainConfig tcfg = cfg.train();
    fs::create_directories(tcfg.out_dir);
    cfg.write_echo(tcfg.out_dir + "/config.echo");

    TrainResult result;
    if (!resume_path.empty()) {
        const Checkpoint ckpt = load_checkpoint(resume_path);
        result = pretrain(data.clouds, mcfg, tcfg, &ckpt);
    } else {
        result = pretrain(data.clouds, mcfg, tcfg);
    }
    const double first = result.epoch_mean_total.empty() ? 0.0 : result.epoch_mean_total.front();
    const double last = result.epoch_mean_total.empty() ? 0.0 : result.epoch_mean_total.back();
    std::cout << "pretrained " << tcfg.epochs << " epochs on " << data.clouds.size()
              << " clouds; epoch-mean total " << first << " -> " << last << "\n";
    std::cout << "checkpoint: " << tcfg.out_dir << "/checkpoint_final.ckpt\n";
    return kExitOk;
}

int cmd_probe(const std::string& config_path, const std::string& ckpt_path,
              const std::string& task, double train_fraction, const std::string& report_path,
              const std::string& features_csv) {
    const RunConfig cfg = RunConfig::from_file(config_path);
    const SyntheticDataset data = generate_dataset(cfg);
    const CpNetConfig mcfg = cfg.model();
    Checkpoint ckpt = load_checkpoint(ckpt_path);

    ProbeReport report;
    if (task == "classify") {
        const auto features = extract_features_classify(ckpt.params, mcfg, data.clouds);
        if (!features_csv.empty()) {
            std::ofstream out(features_csv);
            if (!out) throw IoError("cannot write " + features_csv);
            for (std::size_t i = 0; i < features.size(); ++i) {
                out << data.clouds[i].id << ',' << data.class_labels[i];
                for (const double v : features[i]) out << ',' << v;
                out << "\n";
            }
        }
        report = linear_probe_classify(features, data.class_labels, train_fraction,
                                       substream(cfg.seed(), "probe"));
    } else if (task == "segment") {
        const auto features = extract_features_segment(ckpt.params, mcfg, data.clouds);
        std::vector<std::vector<int>> labels;
        for (const PointCloud& c : data.clouds) {
            if (!c.part_labels) throw ConfigError("segment probe needs part labels");
            labels.push_back(*c.part_labels);
        }
        if (!features_csv.empty()) {
            std::ofstream out(features_csv);
            if (!out) throw IoError("cannot write " + features_csv);
            for (std::size_t i = 0; i < features.size(); ++i)
                for (int r = 0; r < features[i].dim(0); ++r) {
                    out << data.clouds[i].id << ',' << r << ',' << labels[i][static_cast<std::size_t>(r)];
                    for (int ch = 0; ch < features[i].dim(1); ++ch)
                        out << ',' << features[i].at(r, ch);
                    out << "\n";
                }
        }
        report = linear_probe_segment(features, labels, data.class_labels, train_fraction,
                                      substream(cfg.seed(), "probe"));
    } else {
        throw ConfigError("task must be 'classify' or 'segment'");
    }

    const std::string json = report.to_json();
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw IoError("cannot write " + report_path);
        out << json << "\n";
    }
    std::cout << json << "\n";
    return kExitOk;
}

int cmd_gradcheck(int n, int batch, std::uint64_t seed, int sample, double h) {
    ToyGradCheckSpec spec;
    spec.n_points = n;
    spec.batch = batch;
    spec.seed = seed;
    spec.sample = sample;
    spec.h = h;
    const GradCheckResult res = dual_branch_grad_check(spec);
    std::cout << "max relative error " << res.max_rel_error << " over " << res.evaluated
              << " parameter elements (worst: " << res.worst_param << "[" << res.worst_index
              << "])\n";
    return res.max_rel_error < 1e-4 ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CP-Net: contour-perturbed self-supervised point cloud learning"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "generate synthetic shape clouds");
    std::string gen_kind = "sphere";
    int gen_n = 256, gen_count = 10;
    std::uint64_t gen_seed = 1;
    double gen_noise = 0.0;
    std::string gen_out = "data";
    gen->add_option("--kind", gen_kind, "sphere|cube|torus|cylinder|barbell");
    gen->add_option("--n", gen_n, "points per cloud");
    gen->add_option("--count", gen_count, "number of clouds");
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--noise-std", gen_noise, "surface noise std");
    gen->add_option("--out", gen_out, "output directory");

    auto* dec = app.add_subcommand("decompose", "split a cloud into contour and content halves");
    std::string dec_in, dec_contour = "contour.xyz", dec_content = "content.xyz", dec_report;
    int dec_k = 16;
    dec->add_option("--in", dec_in, "input cloud (xyz/off/ply)")->required();
    dec->add_option("--k", dec_k, "graph neighbor count");
    dec->add_option("--out-contour", dec_contour, "contour half output");
    dec->add_option("--out-content", dec_content, "content half output");
    dec->add_option("--report", dec_report, "JSON score report path");

    auto* per = app.add_subcommand("perturb", "apply a perturbation manner");
    std::string per_in, per_manner = "H", per_out = "perturbed.xyz";
    double per_std = 0.02, per_clip = 0.0;
    std::uint64_t per_seed = 1;
    int per_k = 16;
    per->add_option("--in", per_in, "input cloud")->required();
    per->add_option("--manner", per_manner, "A..I (H = jitter contour points)");
    per->add_option("--std", per_std, "noise std");
    per->add_option("--seed", per_seed, "noise seed");
    per->add_option("--k", per_k, "graph neighbor count");
    per->add_option("--clip", per_clip, "clamp noise to [-clip, clip]; 0 = off");
    per->add_option("--out", per_out, "output cloud");

    auto* pre = app.add_subcommand("pretrain", "self-supervised pre-training from a config file");
    std::string pre_config, pre_resume;
    pre->add_option("--config", pre_config, "key = value config file")->required();
    pre->add_option("--resume", pre_resume, "checkpoint to resume from");

    auto* probe = app.add_subcommand("probe", "linear probe on frozen features");
    std::string probe_config, probe_ckpt, probe_task = "classify", probe_report, probe_csv;
    double probe_fraction = 0.5;
    probe->add_option("--config", probe_config, "config the checkpoint was trained with")
        ->required();
    probe->add_option("--ckpt", probe_ckpt, "checkpoint path")->required();
    probe->add_option("--task", probe_task, "classify|segment");
    probe->add_option("--train-fraction", probe_fraction, "labeled fraction in (0,1)");
    probe->add_option("--report", probe_report, "write the JSON report here");
    probe->add_option("--features-csv", probe_csv, "dump frozen features to CSV");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
    int gc_n = 64, gc_batch = 2, gc_sample = 200;
    std::uint64_t gc_seed = 5;
    double gc_h = 1e-6;
    gc->add_option("--n", gc_n, "points per cloud");
    gc->add_option("--batch", gc_batch, "batch size");
    gc->add_option("--seed", gc_seed, "seed");
    gc->add_option("--sample", gc_sample, "parameter elements to probe (0 = all)");
    gc->add_option("--step", gc_h, "finite-difference step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen) return cmd_gen(gen_kind, gen_n, gen_count, gen_seed, gen_noise, gen_out);
        if (*dec) return cmd_decompose(dec_in, dec_k, dec_contour, dec_content, dec_report);
        if (*per) return cmd_perturb(per_in, per_manner, per_std, per_seed, per_k, per_clip, per_out);
        if (*pre) return cmd_pretrain(pre_config, pre_resume);
        if (*probe)
            return cmd_probe(probe_config, probe_ckpt, probe_task, probe_fraction, probe_report,
                             probe_csv);
        if (*gc) return cmd_gradcheck(gc_n, gc_batch, gc_seed, gc_sample, gc_h);
    } catch (const NonFiniteLoss& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const NonFinite& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
