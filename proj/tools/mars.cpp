// Command-line front end: one subcommand per pipeline stage, plus a sweep.

#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mars/io.hpp"
#include "mars/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mars;

namespace {

const auto kUnitInterval = CLI::Validator(
    [](std::string& s) -> std::string {
        double v = 0.0;
        try {
            v = std::stod(s);
        } catch (...) {
            return "not a number: " + s;
        }
        return v > 0.0 && v <= 1.0 ? "" : "must be in (0, 1], got " + s;
    },
    "(0,1]");

fs::path label_file(const fs::path& dir, const std::string& image_id) { return dir / (image_id + ".lb"); }

std::vector<LabelMap> read_label_dir(const fs::path& dir, const DatasetManifest& m) {
    std::vector<LabelMap> out;
    out.reserve(m.records.size());
    for (const auto& rec : m.records) out.push_back(read_label_map(label_file(dir, rec.image_id), m.num_classes));
    return out;
}

void write_label_dir(const fs::path& dir, const DatasetManifest& m, const std::vector<LabelMap>& labels) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < labels.size(); ++i) write_label_map(label_file(dir, m.records[i].image_id), labels[i]);
}

TrainMode parse_mode(const std::string& s) {
    if (s == "wce") return TrainMode::kComplementWce;
    if (s == "complement") return TrainMode::kComplement;
    if (s == "exclude") return TrainMode::kExcludeBiased;
    throw Error("unknown mode: " + s);
}

std::string training_log_csv(const std::vector<EpochMetrics>& log) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,loss,miou,fp,fn\n";
    for (const auto& m : log) {
        os << m.epoch << ',' << m.loss << ',';
        if (m.eval) {
            os << m.eval->miou << ',' << m.eval->fp_rate << ',' << m.eval->fn_rate;
        } else {
            os << ",,";
        }
        os << '\n';
    }
    return os.str();
}

struct TrainFlags {
    int epochs = 30;
    double lr = 0.05;
    double ema = 0.99;
    uint64_t seed = 0;
    std::string mode = "wce";

    void add(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "Training epochs")->check(CLI::NonNegativeNumber)->capture_default_str();
        cmd->add_option("--lr", lr, "Learning rate")->check(CLI::PositiveNumber)->capture_default_str();
        cmd->add_option("--ema", ema, "EMA momentum of the teacher")
            ->check(CLI::Range(0.0, 1.0 - 1e-12))
            ->capture_default_str();
        cmd->add_option("--seed", seed, "Shuffle seed")->capture_default_str();
        cmd->add_option("--mode", mode, "Loss variant")
            ->check(CLI::IsMember({"wce", "complement", "exclude"}))
            ->capture_default_str();
    }

    TrainConfig config(double threshold) const {
        TrainConfig c;
        c.epochs = epochs;
        c.learning_rate = lr;
        c.ema_momentum = ema;
        c.seed = seed;
        c.refinement_threshold = threshold;
        c.mode = parse_mode(mode);
        return c;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Debiasing pseudo labels with background centroids, then teacher/student training."};
    app.require_subcommand(1);

    // synth
    std::string synth_out, synth_config;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic biased corpus");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--config", synth_config, "JSON synth config (defaults when omitted)")->check(CLI::ExistingFile);

    // cluster
    std::string cluster_manifest, cluster_out;
    int kfg = 2, kbg = 2;
    uint64_t cluster_seed = 0;
    auto* cluster = app.add_subcommand("cluster", "Build the per-image centroid bank");
    cluster->add_option("--manifest", cluster_manifest, "Manifest (JSONL)")->required()->check(CLI::ExistingFile);
    cluster->add_option("--kfg", kfg, "Foreground clusters per image and class")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cluster->add_option("--kbg", kbg, "Background clusters per image")->check(CLI::PositiveNumber)->capture_default_str();
    cluster->add_option("--seed", cluster_seed, "Clustering seed")->capture_default_str();
    cluster->add_option("--out", cluster_out, "Output bank file")->required();

    // select
    std::string select_bank, select_out;
    double alpha = kDefaultAlpha;
    auto* select = app.add_subcommand("select", "Aggregate the debiased centroid of every class");
    select->add_option("--bank", select_bank, "Centroid bank")->required()->check(CLI::ExistingFile);
    select->add_option("--alpha", alpha, "Selected fraction")->check(kUnitInterval)->capture_default_str();
    select->add_option("--out", select_out, "Output centroid file (JSON)")->required();

    // debias
    std::string debias_manifest, debias_centroids, debias_out;
    double threshold = kDefaultThreshold;
    auto* debias = app.add_subcommand("debias", "Rewrite biased pseudo-label pixels to -1");
    debias->add_option("--manifest", debias_manifest, "Manifest (JSONL)")->required()->check(CLI::ExistingFile);
    debias->add_option("--centroids", debias_centroids, "Centroid file")->required()->check(CLI::ExistingFile);
    debias->add_option("--threshold", threshold, "Similarity threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    debias->add_option("--out", debias_out, "Output directory for debiased labels")->required();

    // train
    std::string train_manifest, train_debiased, train_out, train_log, train_pred;
    TrainFlags train_flags;
    auto* trainc = app.add_subcommand("train", "Train the student/teacher head on debiased labels");
    trainc->add_option("--manifest", train_manifest, "Manifest (JSONL)")->required()->check(CLI::ExistingFile);
    trainc->add_option("--debiased", train_debiased, "Directory of debiased labels")
        ->required()
        ->check(CLI::ExistingDirectory);
    train_flags.add(trainc);
    trainc->add_option("--out", train_out, "Output checkpoint (teacher head)")->required();
    trainc->add_option("--log", train_log, "Per-epoch metrics CSV");
    trainc->add_option("--pred-out", train_pred, "Directory for final teacher predictions");

    // eval
    std::string eval_manifest, eval_pred, eval_out, eval_fp_csv;
    auto* evalc = app.add_subcommand("eval", "Score predictions against ground truth");
    evalc->add_option("--manifest", eval_manifest, "Manifest with gt paths")->required()->check(CLI::ExistingFile);
    evalc->add_option("--pred", eval_pred, "Directory of predicted labels")->required()->check(CLI::ExistingDirectory);
    evalc->add_option("--out", eval_out, "Output report (JSON)")->required();
    evalc->add_option("--fp-csv", eval_fp_csv, "Per-class FP rate CSV");

    // export-centroids
    std::string export_bank, export_centroids, export_out;
    auto* exportc = app.add_subcommand("export-centroids", "Write every foreground centroid's score as CSV");
    exportc->add_option("--bank", export_bank, "Centroid bank")->required()->check(CLI::ExistingFile);
    exportc->add_option("--centroids", export_centroids, "Centroid file")->required()->check(CLI::ExistingFile);
    exportc->add_option("--out", export_out, "Output CSV")->required();

    // sweep
    std::string sweep_param, sweep_manifest, sweep_out;
    std::vector<double> sweep_values;
    int sweep_kfg = 2, sweep_kbg = 2;
    uint64_t sweep_cluster_seed = 0;
    double sweep_alpha = kDefaultAlpha, sweep_threshold = kDefaultThreshold;
    TrainFlags sweep_train;
    bool sweep_no_train = false;
    auto* sweep = app.add_subcommand("sweep", "Run the pipeline over a range of one hyperparameter");
    sweep->add_option("--param", sweep_param, "Swept parameter")
        ->required()
        ->check(CLI::IsMember({"alpha", "kbg", "threshold"}));
    sweep->add_option("--values", sweep_values, "Comma-separated values")->required()->delimiter(',');
    sweep->add_option("--manifest", sweep_manifest, "Manifest (JSONL)")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", sweep_out, "Output CSV")->required();
    sweep->add_option("--kfg", sweep_kfg, "Foreground clusters")->check(CLI::PositiveNumber)->capture_default_str();
    sweep->add_option("--kbg", sweep_kbg, "Background clusters")->check(CLI::PositiveNumber)->capture_default_str();
    sweep->add_option("--cluster-seed", sweep_cluster_seed, "Clustering seed")->capture_default_str();
    sweep->add_option("--alpha", sweep_alpha, "Selected fraction")->check(kUnitInterval)->capture_default_str();
    sweep->add_option("--threshold", sweep_threshold, "Similarity threshold")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sweep_train.add(sweep);
    sweep->add_flag("--no-train", sweep_no_train, "Stop after debiasing (selection accuracy only)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n\n";
        const auto parsed = app.get_subcommands();
        std::cerr << (parsed.empty() ? app.help() : parsed.front()->help());
        return e.get_exit_code();
    }

    try {
        if (*synth) {
            const SynthConfig cfg = synth_config.empty() ? SynthConfig{} : synth_config_from_json(read_file(synth_config));
            const SynthCorpus corpus = generate(cfg);
            write_corpus(corpus, synth_out);
            std::cout << "wrote " << corpus.manifest.records.size() << " images to " << synth_out << "\n";
        } else if (*cluster) {
            const Corpus corpus = load_corpus(cluster_manifest);
            const CentroidBank bank =
                build_centroid_bank(corpus.manifest, corpus.features, corpus.pseudo_labels, kfg, kbg, cluster_seed);
            write_bank(cluster_out, bank);
            std::cout << "bank: " << bank.foreground_size() << " foreground, " << bank.background.size()
                      << " background centroids\n";
        } else if (*select) {
            const DebiasedCentroidSet set = select_debiased(read_bank(select_bank), alpha);
            write_centroid_set(select_out, set);
            for (const auto& [cls, n] : set.selected_counts) {
                std::cout << "class " << cls << ": " << n << " centroid(s) selected\n";
            }
        } else if (*debias) {
            const Corpus corpus = load_corpus(debias_manifest);
            std::map<int, int> skipped;
            const auto debiased =
                debias_corpus(corpus, read_centroid_set(debias_centroids), ThresholdRefinement(threshold), &skipped);
            for (const auto& [cls, n] : skipped) {
                std::cerr << "warning: class " << cls << " has no debiased centroid; skipped in " << n
                          << " image(s)\n";
            }
            write_label_dir(debias_out, corpus.manifest, debiased);
            if (corpus.has_gt() || corpus.has_oracle()) {
                const DebiasStats s = debias_stats(corpus, debiased);
                std::cout << "removed " << s.foreground_removed << " of " << s.foreground_pixels
                          << " foreground pixels";
                if (corpus.has_oracle()) std::cout << "; biased recall " << s.biased_recall();
                if (corpus.has_gt()) std::cout << "; target retention " << s.target_retention();
                std::cout << "\n";
            }
        } else if (*trainc) {
            const Corpus corpus = load_corpus(train_manifest);
            const auto debiased = read_label_dir(train_debiased, corpus.manifest);
            const TrainResult r = train(corpus.manifest, corpus.features, debiased,
                                        train_flags.config(kDefaultThreshold), corpus.gt);
            write_head(train_out, r.teacher);
            if (!train_log.empty()) write_text_atomic(train_log, training_log_csv(r.log));
            if (!train_pred.empty()) {
                write_label_dir(train_pred, corpus.manifest, predict(r.teacher, corpus.features, corpus.manifest));
            }
            if (!r.log.empty()) {
                std::cout << "final loss " << r.log.back().loss;
                if (r.log.back().eval) std::cout << ", mIoU " << r.log.back().eval->miou;
                std::cout << "\n";
            }
        } else if (*evalc) {
            const Corpus corpus = load_corpus(eval_manifest);
            const EvalReport r = evaluate(corpus, read_label_dir(eval_pred, corpus.manifest));
            write_text_atomic(eval_out, report_json(r));
            if (!eval_fp_csv.empty()) write_text_atomic(eval_fp_csv, per_class_fp_csv(r));
            std::cout << report_text(r);
        } else if (*exportc) {
            const CentroidBank bank = read_bank(export_bank);
            const DebiasedCentroidSet set = read_centroid_set(export_centroids);
            std::ostringstream os;
            os.precision(17);
            os << "class_id,image_id,cluster_index,dist,selected\n";
            for (const auto& [cls, list] : bank.foreground) {
                std::set<std::pair<std::string, int>> chosen;
                if (auto it = set.selected.find(cls); it != set.selected.end()) {
                    for (const auto& ref : it->second) chosen.emplace(ref.image_id, ref.cluster_index);
                }
                for (const auto& sc : rank_class(list, bank)) {
                    os << cls << ',' << sc.centroid.image_id << ',' << sc.centroid.cluster_index << ',' << sc.dist
                       << ',' << chosen.count({sc.centroid.image_id, sc.centroid.cluster_index}) << '\n';
                }
            }
            write_text_atomic(export_out, os.str());
        } else if (*sweep) {
            const Corpus corpus = load_corpus(sweep_manifest);
            PipelineParams base;
            base.k_fg = sweep_kfg;
            base.k_bg = sweep_kbg;
            base.cluster_seed = sweep_cluster_seed;
            base.alpha = sweep_alpha;
            base.train = sweep_train.config(sweep_threshold);
            base.run_training = !sweep_no_train;
            const SweepParam param = parse_sweep_param(sweep_param);
            const auto rows = run_sweep(corpus, base, param, sweep_values);
            write_text_atomic(sweep_out, sweep_csv(param, rows));
            std::cout << "wrote " << rows.size() << " rows to " << sweep_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
