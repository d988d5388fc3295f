#include "mars/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "json.hpp"
#include "mars/io.hpp"
#include "mars/rng.hpp"

namespace mars {

namespace {

constexpr double kMaxPrototypeSimilarity = 0.2;

struct Rect {
    int y0, x0, h, w;
};

std::vector<Vec> orthonormal_basis(int count, int dim, Rng& rng) {
    std::vector<Vec> basis;
    while (int(basis.size()) < count) {
        Vec v(dim);
        for (double& x : v) x = rng.normal();
        for (const Vec& b : basis) {
            const double p = dot(v, b);
            for (int d = 0; d < dim; ++d) v[d] -= p * b[d];
        }
        if (norm(v) < 1e-6) continue;
        basis.push_back(normalized(v));
    }
    return basis;
}

SynthPrototypes make_prototypes(const SynthConfig& cfg, Rng& rng) {
    const int C = cfg.num_classes;
    std::vector<int> plain;
    for (int c = 1; c <= C; ++c) {
        if (!cfg.problematic_classes.contains(c)) plain.push_back(c);
    }
    const int parts = cfg.part_rate > 0.0 ? int(plain.size()) : 0;
    const int count = C + 1 + int(cfg.problematic_classes.size()) + parts;
    if (cfg.embedding_dim < std::max(C + 2, count)) {
        throw Error("embedding_dim " + std::to_string(cfg.embedding_dim) + " too small for " +
                    std::to_string(count) + " orthogonal prototypes");
    }
    const auto basis = orthonormal_basis(count, cfg.embedding_dim, rng);
    SynthPrototypes p;
    int next = 0;
    for (int c = 1; c <= C; ++c) p.target[c] = basis[next++];
    p.background = basis[next++];
    const double rho = cfg.biased_class_similarity;
    for (int c : cfg.problematic_classes) {
        const Vec& z = basis[next++];
        Vec v(cfg.embedding_dim);
        for (int d = 0; d < cfg.embedding_dim; ++d) {
            v[d] = rho * p.target[c][d] + std::sqrt(1.0 - rho * rho) * z[d];
        }
        p.biased[c] = normalized(v);
    }
    if (parts > 0) {
        const double a = cfg.part_class_similarity;
        const double b = cfg.part_background_similarity;
        const double rest = std::sqrt(1.0 - a * a - b * b);
        for (int c : plain) {
            const Vec& q = basis[next++];
            Vec v(cfg.embedding_dim);
            for (int d = 0; d < cfg.embedding_dim; ++d) {
                v[d] = a * p.target[c][d] + b * p.background[d] + rest * q[d];
            }
            p.part[c] = normalized(v);
        }
    }

    std::vector<const Vec*> distinct;
    for (const auto& [c, v] : p.target) distinct.push_back(&v);
    distinct.push_back(&p.background);
    for (const auto& [c, v] : p.biased) distinct.push_back(&v);
    for (std::size_t i = 0; i < distinct.size(); ++i) {
        for (std::size_t j = i + 1; j < distinct.size(); ++j) {
            if (cosine_similarity(*distinct[i], *distinct[j]) > kMaxPrototypeSimilarity) {
                throw Error("prototype separation violated");
            }
        }
    }
    return p;
}

std::string image_id_for(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%04d", i);
    return buf;
}

bool fits(const Rect& r, int height, int width) {
    return r.y0 >= 0 && r.x0 >= 0 && r.y0 + r.h <= height && r.x0 + r.w <= width;
}

}  // namespace

void SynthConfig::validate() const {
    if (num_images < 1) throw Error("num_images must be >= 1");
    if (height < 1 || width < 1) throw Error("image size must be positive");
    if (num_classes < 1) throw Error("num_classes must be >= 1");
    for (int c : problematic_classes) {
        if (c < 1 || c > num_classes) throw Error("problematic class out of range");
    }
    if (!(bias_cooccurrence >= 0.0 && bias_cooccurrence <= 1.0)) {
        throw Error("bias_cooccurrence must be in [0, 1]");
    }
    if (!(bias_in_background_rate > 0.0 && bias_in_background_rate <= 1.0)) {
        throw Error("bias_in_background_rate must be in (0, 1]");
    }
    if (!(biased_class_similarity >= 0.0 && biased_class_similarity <= kMaxPrototypeSimilarity)) {
        throw Error("biased_class_similarity must be in [0, 0.2]");
    }
    if (!(feature_noise_sigma >= 0.0)) throw Error("feature_noise_sigma must be >= 0");
    if (max_classes_per_image < 1) throw Error("max_classes_per_image must be >= 1");
    if (!(part_rate >= 0.0 && part_rate <= 1.0)) throw Error("part_rate must be in [0, 1]");
    const double a = part_class_similarity;
    const double b = part_background_similarity;
    if (a < 0.0 || b < 0.0 || a * a + b * b >= 1.0) throw Error("part similarities out of range");
    if (part_height > target_height || part_width > target_width) {
        throw Error("infeasible layout: part larger than target");
    }
}

SynthCorpus generate(const SynthConfig& config) {
    config.validate();
    const int C = config.num_classes;
    const int H = config.height;
    const int W = config.width;
    const int D = config.embedding_dim;
    const int slots = std::min(config.max_classes_per_image, C);
    const int slot_w = W / slots;
    if (config.target_width > slot_w || config.target_height + config.biased_height > H) {
        throw Error("infeasible layout: blobs exceed the image");
    }

    SynthCorpus corpus;
    corpus.config = config;
    corpus.manifest.num_classes = C;
    corpus.manifest.embedding_dim = D;

    Rng proto_rng(config.seed);
    corpus.prototypes = make_prototypes(config, proto_rng);
    const SynthPrototypes& protos = corpus.prototypes;

    for (int i = 0; i < config.num_images; ++i) {
        const std::string id = image_id_for(i);
        Rng rng(config.seed ^ stable_hash(id, 0));

        // First class cycles so every class is represented; the rest are random.
        std::vector<int> classes{1 + i % C};
        const int extra = int(rng.below(uint64_t(slots)));
        std::vector<int> others;
        for (int c = 1; c <= C; ++c) {
            if (c != classes[0]) others.push_back(c);
        }
        rng.shuffle(others);
        for (int k = 0; k < extra && k < int(others.size()); ++k) classes.push_back(others[k]);
        rng.shuffle(classes);

        // Which prototype each pixel draws from.
        std::vector<const Vec*> source(std::size_t(H) * W, &protos.background);
        std::vector<uint8_t> occupied(std::size_t(H) * W, 0);
        LabelMap gt(H, W, C, 0);
        LabelMap pseudo(H, W, C, 0);
        BinaryMask biased{H, W, std::vector<uint8_t>(std::size_t(H) * W, 0)};

        auto paint = [&](const Rect& r, const Vec* proto, int gt_value, int pseudo_value,
                         bool is_biased) {
            for (int y = r.y0; y < r.y0 + r.h; ++y) {
                for (int x = r.x0; x < r.x0 + r.w; ++x) {
                    const std::size_t px = std::size_t(y) * W + x;
                    source[px] = proto;
                    gt[px] = int16_t(gt_value);
                    pseudo[px] = int16_t(pseudo_value);
                    biased.values[px] = is_biased;
                    occupied[px] = 1;
                }
            }
        };

        for (std::size_t s = 0; s < classes.size(); ++s) {
            const int c = classes[s];
            const int block_h = config.target_height + config.biased_height;
            const Rect target{int(rng.below(uint64_t(H - block_h + 1))),
                              int(s) * slot_w + int(rng.below(uint64_t(slot_w - config.target_width + 1))),
                              config.target_height, config.target_width};
            paint(target, &protos.target.at(c), c, c, false);
            // Reserve the block below the target so background patches stay clear of it.
            for (int y = target.y0; y < target.y0 + block_h; ++y) {
                for (int x = target.x0; x < target.x0 + target.w; ++x) occupied[std::size_t(y) * W + x] = 1;
            }
            if (config.problematic_classes.contains(c)) {
                if (rng.bernoulli(config.bias_cooccurrence)) {
                    const Rect blob{target.y0 + target.h, target.x0, config.biased_height, target.w};
                    paint(blob, &protos.biased.at(c), 0, c, true);
                }
            } else if (config.part_rate > 0.0 && rng.bernoulli(config.part_rate)) {
                const Rect part{target.y0 + target.h - config.part_height,
                                target.x0 + (target.w - config.part_width) / 2, config.part_height,
                                config.part_width};
                paint(part, &protos.part.at(c), c, c, false);
            }
        }

        // The biased texture also appears in backgrounds of unrelated images.
        for (int c : config.problematic_classes) {
            if (std::find(classes.begin(), classes.end(), c) != classes.end()) continue;
            if (!rng.bernoulli(config.bias_in_background_rate)) continue;
            const int ph = config.biased_height;
            const int pw = config.target_width;
            for (int attempt = 0; attempt < 100; ++attempt) {
                const Rect r{int(rng.below(uint64_t(H - ph + 1))), int(rng.below(uint64_t(W - pw + 1))), ph, pw};
                if (!fits(r, H, W)) continue;
                bool clear = true;
                for (int y = r.y0; y < r.y0 + r.h && clear; ++y) {
                    for (int x = r.x0; x < r.x0 + r.w; ++x) {
                        if (occupied[std::size_t(y) * W + x]) {
                            clear = false;
                            break;
                        }
                    }
                }
                if (!clear) continue;
                paint(r, &protos.biased.at(c), 0, 0, false);
                break;
            }
        }

        FeatureMap f(D, H, W);
        Vec v(D);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const Vec& proto = *source[std::size_t(y) * W + x];
                for (int d = 0; d < D; ++d) v[d] = proto[d] + config.feature_noise_sigma * rng.normal();
                const Vec u = normalized(v);
                for (int d = 0; d < D; ++d) f.at(d, y, x) = float(u[d]);
            }
        }

        ImageRecord rec;
        rec.image_id = id;
        rec.truth_classes = std::set<int>(classes.begin(), classes.end());
        rec.feature_path = "features/" + id + ".ft";
        rec.label_path = "labels/" + id + ".lb";
        rec.gt_path = "gt/" + id + ".gt.lb";
        rec.biased_path = "biased/" + id + ".bias.lb";
        corpus.manifest.records.push_back(std::move(rec));
        corpus.features.push_back(std::move(f));
        corpus.pseudo_labels.push_back(std::move(pseudo));
        corpus.gt.push_back(std::move(gt));
        corpus.biased_masks.push_back(std::move(biased));
    }

    // The biased texture must sit closer to the background bank than the target does.
    for (int c : config.problematic_classes) {
        double biased_sum = 0.0;
        double target_sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < corpus.features.size(); ++i) {
            const auto& f = corpus.features[i];
            const auto& y = corpus.pseudo_labels[i];
            for (int r = 0; r < H; ++r) {
                for (int x = 0; x < W; ++x) {
                    if (y.at(r, x) != 0) continue;
                    const Vec pv = pixel_vector(f, r, x);
                    biased_sum += cosine_distance(protos.biased.at(c), pv);
                    target_sum += cosine_distance(protos.target.at(c), pv);
                    ++count;
                }
            }
        }
        if (count == 0 || !(biased_sum < target_sum)) {
            throw Error("generated corpus violates the biased-texture premise for class " +
                        std::to_string(c) + "; raise bias_in_background_rate or num_images");
        }
    }
    corpus.manifest.validate();
    return corpus;
}

BinaryMask oracle_biased_pixels(const SynthCorpus& corpus, std::size_t image) {
    return corpus.biased_masks.at(image);
}

void write_corpus(const SynthCorpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    for (const char* sub : {"features", "labels", "gt", "biased"}) fs::create_directories(fs::path(dir) / sub);
    const int C = corpus.manifest.num_classes;
    for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i) {
        const auto& rec = corpus.manifest.records[i];
        write_feature_map(fs::path(dir) / rec.feature_path, corpus.features[i]);
        write_label_map(fs::path(dir) / rec.label_path, corpus.pseudo_labels[i]);
        write_label_map(fs::path(dir) / rec.gt_path, corpus.gt[i]);
        const auto& m = corpus.biased_masks[i];
        std::vector<int16_t> vals(m.values.begin(), m.values.end());
        write_label_map(fs::path(dir) / rec.biased_path, LabelMap(m.height, m.width, C, std::move(vals)));
    }
    write_manifest(fs::path(dir) / "manifest.jsonl", corpus.manifest);
    write_text_atomic(fs::path(dir) / "synth_config.json", synth_config_to_json(corpus.config));
}

std::map<std::pair<std::string, int>, bool> centroid_is_target(
    const CentroidBank& bank, int class_id, const DatasetManifest& manifest,
    const std::vector<FeatureMap>& features, const std::vector<LabelMap>& pseudo_labels,
    const std::vector<LabelMap>& gt, const std::vector<BinaryMask>& biased_masks) {
    std::map<std::pair<std::string, int>, bool> out;
    auto it = bank.foreground.find(class_id);
    if (it == bank.foreground.end()) return out;

    std::map<std::string, std::vector<const Centroid*>> by_image;
    for (const Centroid& c : it->second) by_image[c.image_id].push_back(&c);

    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        auto found = by_image.find(manifest.records[i].image_id);
        if (found == by_image.end()) continue;
        const auto& cents = found->second;
        const auto& f = features[i];
        const auto& y = pseudo_labels[i];
        std::vector<std::size_t> members(cents.size(), 0), hit_target(cents.size(), 0),
            hit_biased(cents.size(), 0);
        std::size_t target_area = 0, biased_area = 0;
        for (int r = 0; r < y.height(); ++r) {
            for (int x = 0; x < y.width(); ++x) {
                if (y.at(r, x) != class_id) continue;
                const bool is_target = gt[i].at(r, x) == class_id;
                const bool is_biased = biased_masks[i].at(r, x) != 0;
                target_area += is_target;
                biased_area += is_biased;
                const Vec v = normalized(pixel_vector(f, r, x));
                std::size_t best = 0;
                double best_sim = -2.0;
                for (std::size_t k = 0; k < cents.size(); ++k) {
                    const double s = dot(v, cents[k]->vector);
                    if (s > best_sim) {
                        best_sim = s;
                        best = k;
                    }
                }
                ++members[best];
                hit_target[best] += is_target;
                hit_biased[best] += is_biased;
            }
        }
        for (std::size_t k = 0; k < cents.size(); ++k) {
            auto iou = [&](std::size_t inter, std::size_t area) {
                const std::size_t uni = members[k] + area - inter;
                return uni ? double(inter) / double(uni) : 0.0;
            };
            out[{cents[k]->image_id, cents[k]->cluster_index}] =
                iou(hit_target[k], target_area) > iou(hit_biased[k], biased_area);
        }
    }
    return out;
}

SynthConfig synth_config_from_json(const std::string& json_text) {
    const auto j = nlohmann::json::parse(json_text);
    SynthConfig c;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("num_images", c.num_images);
    get("height", c.height);
    get("width", c.width);
    get("num_classes", c.num_classes);
    get("embedding_dim", c.embedding_dim);
    if (j.contains("problematic_classes")) {
        c.problematic_classes = j.at("problematic_classes").get<std::set<int>>();
    }
    get("bias_cooccurrence", c.bias_cooccurrence);
    get("bias_in_background_rate", c.bias_in_background_rate);
    get("feature_noise_sigma", c.feature_noise_sigma);
    get("seed", c.seed);
    get("max_classes_per_image", c.max_classes_per_image);
    get("target_height", c.target_height);
    get("target_width", c.target_width);
    get("biased_height", c.biased_height);
    get("biased_class_similarity", c.biased_class_similarity);
    get("part_rate", c.part_rate);
    get("part_height", c.part_height);
    get("part_width", c.part_width);
    get("part_class_similarity", c.part_class_similarity);
    get("part_background_similarity", c.part_background_similarity);
    c.validate();
    return c;
}

std::string synth_config_to_json(const SynthConfig& c) {
    nlohmann::ordered_json j;
    j["num_images"] = c.num_images;
    j["height"] = c.height;
    j["width"] = c.width;
    j["num_classes"] = c.num_classes;
    j["embedding_dim"] = c.embedding_dim;
    j["problematic_classes"] = c.problematic_classes;
    j["bias_cooccurrence"] = c.bias_cooccurrence;
    j["bias_in_background_rate"] = c.bias_in_background_rate;
    j["feature_noise_sigma"] = c.feature_noise_sigma;
    j["seed"] = c.seed;
    j["max_classes_per_image"] = c.max_classes_per_image;
    j["target_height"] = c.target_height;
    j["target_width"] = c.target_width;
    j["biased_height"] = c.biased_height;
    j["biased_class_similarity"] = c.biased_class_similarity;
    j["part_rate"] = c.part_rate;
    j["part_height"] = c.part_height;
    j["part_width"] = c.part_width;
    j["part_class_similarity"] = c.part_class_similarity;
    j["part_background_similarity"] = c.part_background_similarity;
    return j.dump(2) + "\n";
}

}  // namespace mars
