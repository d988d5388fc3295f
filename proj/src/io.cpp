#include "mars/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mars {

namespace {

constexpr std::string_view kFeatureMagic = "MARSFT01";
constexpr std::string_view kLabelMagic = "MARSLB01";
constexpr std::string_view kBankMagic = "MARSCB01";
constexpr std::string_view kHeadMagic = "MARSHD01";

class Writer {
public:
    void magic(std::string_view m) { out_.append(m); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(char((v >> (8 * i)) & 0xff));
    }
    void i32(int32_t v) { u32(uint32_t(v)); }
    void u16(uint16_t v) {
        out_.push_back(char(v & 0xff));
        out_.push_back(char(v >> 8));
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void f64(double v) {
        const uint64_t b = std::bit_cast<uint64_t>(v);
        for (int i = 0; i < 8; ++i) out_.push_back(char((b >> (8 * i)) & 0xff));
    }
    void bytes(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    void magic(std::string_view expected) {
        need(expected.size(), "truncated header");
        if (data_.substr(pos_, expected.size()) != expected) {
            throw FormatError("bad magic, expected " + std::string(expected), pos_);
        }
        pos_ += expected.size();
    }
    uint32_t u32(const char* what = "truncated header") {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    int32_t i32(const char* what) { return int32_t(u32(what)); }
    uint16_t u16() {
        need(2, "payload length mismatch");
        const uint16_t v = uint16_t(uint8_t(data_[pos_]) | (uint16_t(uint8_t(data_[pos_ + 1])) << 8));
        pos_ += 2;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32("payload length mismatch")); }
    double f64() {
        need(8, "payload length mismatch");
        uint64_t b = 0;
        for (int i = 0; i < 8; ++i) b |= uint64_t(uint8_t(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(b);
    }
    std::string bytes(std::size_t n) {
        need(n, "payload length mismatch");
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    uint32_t dim(const char* name) {
        const std::size_t at = pos_;
        const uint32_t v = u32();
        if (v == 0 || v > kMaxDim) {
            throw FormatError(std::string("dim overflow: ") + name + " = " + std::to_string(v), at);
        }
        return v;
    }
    void expect_payload(std::size_t bytes) const {
        if (remaining() != bytes) {
            throw FormatError("payload length mismatch: expected " + std::to_string(bytes) +
                                  " bytes, found " + std::to_string(remaining()),
                              pos_);
        }
    }
    void expect_end() const {
        if (remaining() != 0) throw FormatError("payload length mismatch: trailing bytes", pos_);
    }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n) throw FormatError(what, pos_);
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string write_error(const std::filesystem::path& path) {
    return "cannot write " + path.string();
}

}  // namespace

FormatError::FormatError(const std::string& what, std::size_t offset)
    : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

std::string encode_feature_map(const FeatureMap& f) {
    Writer w;
    w.magic(kFeatureMagic);
    w.u32(uint32_t(f.dim()));
    w.u32(uint32_t(f.height()));
    w.u32(uint32_t(f.width()));
    for (float v : f.data()) w.f32(v);
    return w.take();
}

FeatureMap decode_feature_map(std::string_view bytes) {
    Reader r(bytes);
    r.magic(kFeatureMagic);
    const uint32_t d = r.dim("D");
    const uint32_t h = r.dim("H");
    const uint32_t wd = r.dim("W");
    const std::size_t n = std::size_t(d) * h * wd;
    r.expect_payload(n * 4);
    std::vector<float> data(n);
    for (float& v : data) v = r.f32();
    return FeatureMap(int(d), int(h), int(wd), std::move(data));
}

std::string encode_label_map(const LabelMap& y) {
    Writer w;
    w.magic(kLabelMagic);
    w.u32(uint32_t(y.height()));
    w.u32(uint32_t(y.width()));
    for (int16_t v : y.values()) w.u16(uint16_t(v));
    return w.take();
}

LabelMap decode_label_map(std::string_view bytes, int num_classes) {
    Reader r(bytes);
    r.magic(kLabelMagic);
    const uint32_t h = r.dim("H");
    const uint32_t wd = r.dim("W");
    const std::size_t n = std::size_t(h) * wd;
    r.expect_payload(n * 2);
    std::vector<int16_t> values(n);
    for (int16_t& v : values) {
        const std::size_t at = r.offset();
        v = int16_t(r.u16());
        if (v < LabelMap::kBiased || v > num_classes) {
            throw FormatError("label out of range: " + std::to_string(v) + " with C = " +
                                  std::to_string(num_classes),
                              at);
        }
    }
    return LabelMap(int(h), int(wd), num_classes, std::move(values));
}

std::string encode_bank(const CentroidBank& bank) {
    Writer w;
    w.magic(kBankMagic);
    w.u32(uint32_t(bank.dim));
    w.u32(uint32_t(bank.k_fg));
    w.u32(uint32_t(bank.k_bg));
    w.u32(uint32_t(bank.background.size() + bank.foreground_size()));
    auto put = [&](const Centroid& c) {
        if (int(c.vector.size()) != bank.dim) throw Error("centroid dim does not match bank dim");
        w.i32(c.class_id);
        w.u32(uint32_t(c.cluster_index));
        w.u32(uint32_t(c.member_count));
        w.u32(uint32_t(c.image_id.size()));
        w.bytes(c.image_id);
        for (double v : c.vector) w.f64(v);
    };
    for (const Centroid& c : bank.background) put(c);
    for (const auto& [cls, list] : bank.foreground) {
        for (const Centroid& c : list) put(c);
    }
    return w.take();
}

CentroidBank decode_bank(std::string_view bytes) {
    Reader r(bytes);
    r.magic(kBankMagic);
    CentroidBank bank;
    bank.dim = int(r.dim("D"));
    bank.k_fg = int(r.dim("k_fg"));
    bank.k_bg = int(r.dim("k_bg"));
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        Centroid c;
        c.class_id = r.i32("payload length mismatch");
        c.cluster_index = int(r.u32("payload length mismatch"));
        c.member_count = int(r.u32("payload length mismatch"));
        const uint32_t len = r.u32("payload length mismatch");
        if (len > r.remaining()) throw FormatError("payload length mismatch", r.offset());
        c.image_id = r.bytes(len);
        c.vector.resize(bank.dim);
        for (double& v : c.vector) v = r.f64();
        if (c.class_id < 0) throw FormatError("negative centroid class", at);
        if (c.class_id == 0) {
            bank.background.push_back(std::move(c));
        } else {
            bank.foreground[c.class_id].push_back(std::move(c));
        }
    }
    r.expect_end();
    return bank;
}

std::string encode_head(const SegHead& head) {
    Writer w;
    w.magic(kHeadMagic);
    w.u32(uint32_t(head.channels));
    w.u32(uint32_t(head.dim));
    for (double v : head.weights) w.f64(v);
    for (double v : head.bias) w.f64(v);
    return w.take();
}

SegHead decode_head(std::string_view bytes) {
    Reader r(bytes);
    r.magic(kHeadMagic);
    const uint32_t channels = r.dim("C+1");
    const uint32_t dim = r.dim("D");
    r.expect_payload((std::size_t(channels) * dim + channels) * 8);
    SegHead head{int(channels), int(dim), std::vector<double>(std::size_t(channels) * dim),
                 std::vector<double>(channels)};
    for (double& v : head.weights) v = r.f64();
    for (double& v : head.bias) v = r.f64();
    return head;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(write_error(path));
        out.write(contents.data(), std::streamsize(contents.size()));
        if (!out) throw Error(write_error(path));
    }
    std::filesystem::rename(tmp, path);
}

void write_feature_map(const std::filesystem::path& path, const FeatureMap& f) {
    write_text_atomic(path, encode_feature_map(f));
}
FeatureMap read_feature_map(const std::filesystem::path& path) {
    return decode_feature_map(read_file(path));
}
void write_label_map(const std::filesystem::path& path, const LabelMap& y) {
    write_text_atomic(path, encode_label_map(y));
}
LabelMap read_label_map(const std::filesystem::path& path, int num_classes) {
    return decode_label_map(read_file(path), num_classes);
}
void write_bank(const std::filesystem::path& path, const CentroidBank& bank) {
    write_text_atomic(path, encode_bank(bank));
}
CentroidBank read_bank(const std::filesystem::path& path) { return decode_bank(read_file(path)); }
void write_head(const std::filesystem::path& path, const SegHead& head) {
    write_text_atomic(path, encode_head(head));
}
SegHead read_head(const std::filesystem::path& path) { return decode_head(read_file(path)); }

std::string encode_manifest(const DatasetManifest& manifest) {
    std::string out;
    nlohmann::ordered_json header;
    header["num_classes"] = manifest.num_classes;
    header["embedding_dim"] = manifest.embedding_dim;
    out += header.dump() + "\n";
    for (const auto& r : manifest.records) {
        nlohmann::ordered_json j;
        j["image_id"] = r.image_id;
        j["features"] = r.feature_path;
        j["label"] = r.label_path;
        j["truth_classes"] = r.truth_classes;
        if (!r.gt_path.empty()) j["gt"] = r.gt_path;
        if (!r.biased_path.empty()) j["biased"] = r.biased_path;
        out += j.dump() + "\n";
    }
    return out;
}

DatasetManifest decode_manifest(std::string_view text, const std::filesystem::path& base_dir) {
    DatasetManifest m;
    auto resolve = [&base_dir](const std::string& p) {
        if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (base_dir / p).string();
    };
    std::istringstream in{std::string(text)};
    std::string line;
    bool header = true;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (header) {
            if (!j.contains("num_classes") || !j.contains("embedding_dim")) {
                throw Error("manifest must start with a num_classes/embedding_dim header line");
            }
            m.num_classes = j.at("num_classes").get<int>();
            m.embedding_dim = j.at("embedding_dim").get<int>();
            header = false;
            continue;
        }
        try {
            ImageRecord r;
            r.image_id = j.at("image_id").get<std::string>();
            r.feature_path = resolve(j.at("features").get<std::string>());
            r.label_path = resolve(j.at("label").get<std::string>());
            r.truth_classes = j.at("truth_classes").get<std::set<int>>();
            if (j.contains("gt")) r.gt_path = resolve(j.at("gt").get<std::string>());
            if (j.contains("biased")) r.biased_path = resolve(j.at("biased").get<std::string>());
            m.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw Error("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (header) throw Error("empty manifest");
    m.validate();
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    write_text_atomic(path, encode_manifest(manifest));
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    return decode_manifest(read_file(path), path.parent_path());
}

std::string encode_centroid_set(const DebiasedCentroidSet& set) {
    nlohmann::ordered_json j;
    j["alpha"] = set.alpha;
    auto& classes = j["classes"] = nlohmann::ordered_json::array();
    for (const auto& [cls, vec] : set.per_class) {
        nlohmann::ordered_json c;
        c["class_id"] = cls;
        c["selected_count"] = set.selected_counts.at(cls);
        c["centroid"] = vec;
        auto& sel = c["selected"] = nlohmann::ordered_json::array();
        if (auto it = set.selected.find(cls); it != set.selected.end()) {
            for (const auto& ref : it->second) {
                sel.push_back({{"image_id", ref.image_id},
                               {"cluster_index", ref.cluster_index},
                               {"dist", ref.dist}});
            }
        }
        classes.push_back(std::move(c));
    }
    return j.dump(2) + "\n";
}

DebiasedCentroidSet decode_centroid_set(std::string_view text) {
    DebiasedCentroidSet set;
    try {
        const auto j = nlohmann::json::parse(text);
        set.alpha = j.at("alpha").get<double>();
        for (const auto& c : j.at("classes")) {
            const int cls = c.at("class_id").get<int>();
            set.per_class[cls] = c.at("centroid").get<Vec>();
            set.selected_counts[cls] = c.at("selected_count").get<int>();
            auto& refs = set.selected[cls];
            for (const auto& s : c.at("selected")) {
                refs.push_back({s.at("image_id").get<std::string>(), s.at("cluster_index").get<int>(),
                                s.at("dist").get<double>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("bad centroid file: ") + e.what());
    }
    return set;
}

void write_centroid_set(const std::filesystem::path& path, const DebiasedCentroidSet& set) {
    write_text_atomic(path, encode_centroid_set(set));
}

DebiasedCentroidSet read_centroid_set(const std::filesystem::path& path) {
    return decode_centroid_set(read_file(path));
}

}  // namespace mars
