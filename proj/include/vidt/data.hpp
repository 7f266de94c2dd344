#pragma once

// Data ingestion: COCO-subset JSON annotations, a seeded synthetic-shapes
// generator for desk-scale training, scale augmentation and polygon
// rasterization.

#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "vidt/png.hpp"
#include "vidt/rng.hpp"
#include "vidt/tensor.hpp"

namespace vidt {

struct BitMask {
    i64 h = 0, w = 0;
    std::vector<std::uint8_t> bits;

    std::uint8_t& at(i64 y, i64 x) { return bits[static_cast<size_t>(y * w + x)]; }
    std::uint8_t at(i64 y, i64 x) const { return bits[static_cast<size_t>(y * w + x)]; }
    i64 area() const {
        i64 n = 0;
        for (auto b : bits) n += b != 0;
        return n;
    }
};

struct ObjectAnnotation {
    int category = 0;
    std::array<double, 4> box_cxcywh = {0, 0, 0, 0};  // normalized
    BitMask mask;                                     // full-image frame
    bool has_mask = false;
};

struct DetectionSample {
    int id = 0;
    Image image;
    std::vector<ObjectAnnotation> objects;
};

struct Dataset {
    std::vector<DetectionSample> samples;
    std::vector<std::string> category_names;
};

inline void validate_sample(const DetectionSample& s) {
    for (const auto& o : s.objects) {
        for (double v : o.box_cxcywh)
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("sample " + std::to_string(s.id) +
                                            ": box leaves [0,1]");
        const double x0 = o.box_cxcywh[0] - o.box_cxcywh[2] / 2;
        const double y0 = o.box_cxcywh[1] - o.box_cxcywh[3] / 2;
        if (x0 < -1e-6 || y0 < -1e-6 ||
            o.box_cxcywh[0] + o.box_cxcywh[2] / 2 > 1.0 + 1e-6 ||
            o.box_cxcywh[1] + o.box_cxcywh[3] / 2 > 1.0 + 1e-6)
            throw std::invalid_argument("sample " + std::to_string(s.id) +
                                        ": box exceeds the image");
        if (o.has_mask && (o.mask.h != s.image.h || o.mask.w != s.image.w))
            throw std::invalid_argument("sample " + std::to_string(s.id) +
                                        ": mask size differs from the image");
    }
}

// ---------------------------------------------------------------------------
// Polygon rasterization (even-odd scanline at pixel centers)
// ---------------------------------------------------------------------------

inline BitMask rasterize_polygon(const std::vector<double>& xy, i64 h, i64 w) {
    BitMask m;
    m.h = h;
    m.w = w;
    m.bits.assign(static_cast<size_t>(h * w), 0);
    const size_t n = xy.size() / 2;
    if (n < 3) return m;
    for (i64 y = 0; y < h; ++y) {
        const double cy = double(y) + 0.5;
        std::vector<double> xs;
        for (size_t i = 0; i < n; ++i) {
            const double x1 = xy[2 * i], y1 = xy[2 * i + 1];
            const double x2 = xy[2 * ((i + 1) % n)], y2 = xy[2 * ((i + 1) % n) + 1];
            if ((y1 <= cy && y2 > cy) || (y2 <= cy && y1 > cy))
                xs.push_back(x1 + (cy - y1) / (y2 - y1) * (x2 - x1));
        }
        std::sort(xs.begin(), xs.end());
        for (size_t i = 0; i + 1 < xs.size(); i += 2) {
            const i64 x0 = std::max<i64>(0, static_cast<i64>(std::ceil(xs[i] - 0.5)));
            const i64 x1 = std::min<i64>(w - 1, static_cast<i64>(std::floor(xs[i + 1] - 0.5)));
            for (i64 x = x0; x <= x1; ++x) m.at(y, x) = 1;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// COCO-subset JSON
// ---------------------------------------------------------------------------

// Uncompressed COCO-style RLE: column-major runs, starting with a zero run.
inline std::vector<i64> mask_to_rle(const BitMask& m) {
    std::vector<i64> counts;
    i64 run = 0;
    std::uint8_t current = 0;
    for (i64 x = 0; x < m.w; ++x)
        for (i64 y = 0; y < m.h; ++y) {
            const std::uint8_t v = m.at(y, x) ? 1 : 0;
            if (v == current) {
                ++run;
            } else {
                counts.push_back(run);
                current = v;
                run = 1;
            }
        }
    counts.push_back(run);
    return counts;
}

inline BitMask rle_to_mask(const std::vector<i64>& counts, i64 h, i64 w) {
    BitMask m;
    m.h = h;
    m.w = w;
    m.bits.assign(static_cast<size_t>(h * w), 0);
    i64 pos = 0;
    std::uint8_t value = 0;
    for (i64 run : counts) {
        for (i64 i = 0; i < run && pos < h * w; ++i, ++pos) {
            const i64 x = pos / h, y = pos % h;
            m.at(y, x) = value;
        }
        value = 1 - value;
    }
    return m;
}

// Reads the images/annotations/categories arrays of a COCO-style file.
// Image pixels load from file_name next to the JSON when present; otherwise
// the sample carries a black canvas of the declared size.
inline Dataset load_coco_json(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("JSON parse error in " + path + " at byte " +
                                 std::to_string(e.byte) + ": " + e.what());
    }
    Dataset ds;
    std::map<i64, int> cat_index;
    std::vector<std::pair<i64, std::string>> cats;
    for (const auto& c : root.at("categories"))
        cats.push_back({c.at("id").get<i64>(), c.value("name", std::string("object"))});
    std::sort(cats.begin(), cats.end());
    for (const auto& [id, name] : cats) {
        cat_index[id] = static_cast<int>(ds.category_names.size());
        ds.category_names.push_back(name);
    }

    const auto dir = std::filesystem::path(path).parent_path();
    std::map<i64, size_t> sample_of_image;
    for (const auto& im : root.at("images")) {
        DetectionSample s;
        s.id = static_cast<int>(im.at("id").get<i64>());
        s.image.h = im.at("height").get<i64>();
        s.image.w = im.at("width").get<i64>();
        const std::string file = im.value("file_name", std::string());
        const auto full = dir / file;
        if (!file.empty() && std::filesystem::exists(full)) {
            s.image = read_png(full.string());
        } else {
            s.image.rgb.assign(static_cast<size_t>(s.image.h * s.image.w * 3), 0);
        }
        sample_of_image[im.at("id").get<i64>()] = ds.samples.size();
        ds.samples.push_back(std::move(s));
    }

    for (const auto& an : root.at("annotations")) {
        const i64 img_id = an.at("image_id").get<i64>();
        auto st = sample_of_image.find(img_id);
        if (st == sample_of_image.end()) continue;
        DetectionSample& s = ds.samples[st->second];
        const i64 cat = an.at("category_id").get<i64>();
        auto ct = cat_index.find(cat);
        if (ct == cat_index.end()) {
            std::cerr << "warning: skipping annotation with unknown category " << cat << "\n";
            continue;
        }
        ObjectAnnotation obj;
        obj.category = ct->second;
        const auto& bb = an.at("bbox");
        const double x = bb[0].get<double>(), y = bb[1].get<double>();
        const double bw = bb[2].get<double>(), bh = bb[3].get<double>();
        obj.box_cxcywh = {(x + bw / 2) / double(s.image.w), (y + bh / 2) / double(s.image.h),
                          bw / double(s.image.w), bh / double(s.image.h)};
        if (an.contains("segmentation")) {
            const auto& seg = an.at("segmentation");
            if (seg.is_array() && !seg.empty()) {
                obj.mask.h = s.image.h;
                obj.mask.w = s.image.w;
                obj.mask.bits.assign(static_cast<size_t>(s.image.h * s.image.w), 0);
                for (const auto& poly : seg) {
                    BitMask part =
                        rasterize_polygon(poly.get<std::vector<double>>(), s.image.h, s.image.w);
                    for (size_t i = 0; i < part.bits.size(); ++i)
                        obj.mask.bits[i] |= part.bits[i];
                }
                obj.has_mask = true;
            } else if (seg.is_object() && seg.contains("counts")) {
                obj.mask = rle_to_mask(seg.at("counts").get<std::vector<i64>>(), s.image.h,
                                       s.image.w);
                obj.has_mask = true;
            }
        }
        s.objects.push_back(std::move(obj));
    }
    for (const auto& s : ds.samples) validate_sample(s);
    return ds;
}

// Writes a dataset as COCO-style JSON plus one PNG per image.
inline void write_coco_dataset(const Dataset& ds, const std::string& dir,
                               const std::string& json_name = "annotations.json") {
    std::filesystem::create_directories(dir);
    nlohmann::json root;
    root["categories"] = nlohmann::json::array();
    for (size_t c = 0; c < ds.category_names.size(); ++c)
        root["categories"].push_back({{"id", c + 1}, {"name", ds.category_names[c]}});
    root["images"] = nlohmann::json::array();
    root["annotations"] = nlohmann::json::array();
    i64 ann_id = 1;
    for (const auto& s : ds.samples) {
        const std::string file = "img_" + std::to_string(s.id) + ".png";
        write_png((std::filesystem::path(dir) / file).string(), s.image);
        root["images"].push_back({{"id", s.id},
                                  {"file_name", file},
                                  {"height", s.image.h},
                                  {"width", s.image.w}});
        for (const auto& o : s.objects) {
            const double bw = o.box_cxcywh[2] * s.image.w, bh = o.box_cxcywh[3] * s.image.h;
            const double x = o.box_cxcywh[0] * s.image.w - bw / 2;
            const double y = o.box_cxcywh[1] * s.image.h - bh / 2;
            nlohmann::json an = {{"id", ann_id++},
                                 {"image_id", s.id},
                                 {"category_id", o.category + 1},
                                 {"bbox", {x, y, bw, bh}},
                                 {"area", bw * bh},
                                 {"iscrowd", 0}};
            if (o.has_mask)
                an["segmentation"] = {{"size", {o.mask.h, o.mask.w}},
                                      {"counts", mask_to_rle(o.mask)}};
            root["annotations"].push_back(std::move(an));
        }
    }
    std::ofstream out(std::filesystem::path(dir) / json_name);
    out << root.dump(1);
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

struct SynthSpec {
    i64 image_size = 64;
    int max_objects = 3;
    i64 min_size = 8;       // rectangle side / disk diameter lower bound
    double max_overlap = 0.3;  // pairwise box IoU cap, held by construction
};

namespace detail {

inline double pair_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double ax1 = a[0] - a[2] / 2, ay1 = a[1] - a[3] / 2, ax2 = a[0] + a[2] / 2,
                 ay2 = a[1] + a[3] / 2;
    const double bx1 = b[0] - b[2] / 2, by1 = b[1] - b[3] / 2, bx2 = b[0] + b[2] / 2,
                 by2 = b[1] + b[3] / 2;
    const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const double inter = iw * ih;
    return inter /
           std::max(1e-12, (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter);
}

}  // namespace detail

// Classes: 0 = rectangle (warm fill), 1 = disk (cool fill). Pure in
// (seed, index): every sample is generated from its own derived stream, so
// the dataset is bit-identical across runs and iteration orders.
inline Dataset synth_shapes(std::uint64_t seed, int count, const SynthSpec& spec = {}) {
    Dataset ds;
    ds.category_names = {"rectangle", "disk"};
    const i64 sz = spec.image_size;
    for (int idx = 0; idx < count; ++idx) {
        std::mt19937_64 rng = substream(seed, "synth_shapes", static_cast<std::uint64_t>(idx));
        DetectionSample s;
        s.id = idx;
        s.image.h = sz;
        s.image.w = sz;
        s.image.rgb.resize(static_cast<size_t>(sz * sz * 3));
        std::uniform_int_distribution<int> noise(0, 40);
        for (auto& px : s.image.rgb) px = static_cast<std::uint8_t>(noise(rng));

        std::uniform_int_distribution<int> n_obj(1, spec.max_objects);
        const int want = n_obj(rng);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        int placed = 0, attempts = 0;
        while (placed < want && attempts < 60) {
            ++attempts;
            const int cls = static_cast<int>(rng() % 2);
            ObjectAnnotation obj;
            obj.category = cls;
            obj.mask.h = sz;
            obj.mask.w = sz;
            obj.mask.bits.assign(static_cast<size_t>(sz * sz), 0);
            obj.has_mask = true;
            if (cls == 0) {
                const i64 bw = spec.min_size + static_cast<i64>(uni(rng) * (sz / 2 - spec.min_size));
                const i64 bh = spec.min_size + static_cast<i64>(uni(rng) * (sz / 2 - spec.min_size));
                const i64 x0 = static_cast<i64>(uni(rng) * (sz - bw));
                const i64 y0 = static_cast<i64>(uni(rng) * (sz - bh));
                obj.box_cxcywh = {(x0 + bw / 2.0) / sz, (y0 + bh / 2.0) / sz, double(bw) / sz,
                                  double(bh) / sz};
                for (i64 y = y0; y < y0 + bh; ++y)
                    for (i64 x = x0; x < x0 + bw; ++x) obj.mask.at(y, x) = 1;
            } else {
                const double rmin = std::max(5.0, spec.min_size / 2.0);
                const double r = rmin + uni(rng) * (sz / 4.0 - rmin);
                const double cx = r + 1 + uni(rng) * (sz - 2 * (r + 1));
                const double cy = r + 1 + uni(rng) * (sz - 2 * (r + 1));
                obj.box_cxcywh = {cx / sz, cy / sz, 2 * r / sz, 2 * r / sz};
                for (i64 y = 0; y < sz; ++y)
                    for (i64 x = 0; x < sz; ++x) {
                        const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
                        if (dx * dx + dy * dy <= r * r) obj.mask.at(y, x) = 1;
                    }
            }
            bool ok = true;
            for (const auto& other : s.objects)
                ok = ok && detail::pair_iou(obj.box_cxcywh, other.box_cxcywh) <= spec.max_overlap;
            if (!ok) continue;

            std::uniform_int_distribution<int> hi(170, 255), lo(20, 80);
            const int r8 = cls == 0 ? hi(rng) : lo(rng);
            const int g8 = lo(rng);
            const int b8 = cls == 0 ? lo(rng) : hi(rng);
            for (i64 y = 0; y < sz; ++y)
                for (i64 x = 0; x < sz; ++x)
                    if (obj.mask.at(y, x)) {
                        s.image.at(y, x, 0) = static_cast<std::uint8_t>(r8);
                        s.image.at(y, x, 1) = static_cast<std::uint8_t>(g8);
                        s.image.at(y, x, 2) = static_cast<std::uint8_t>(b8);
                    }
            s.objects.push_back(std::move(obj));
            ++placed;
        }
        validate_sample(s);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Scale augmentation
// ---------------------------------------------------------------------------

struct ScaleAugmentSpec {
    i64 min_short = 48;
    i64 max_short = 80;
    i64 max_long = 133;
};

inline Image resize_image(const Image& img, i64 oh, i64 ow) {
    Image out;
    out.h = oh;
    out.w = ow;
    out.rgb.resize(static_cast<size_t>(oh * ow * 3));
    for (i64 y = 0; y < oh; ++y) {
        const double sy = (y + 0.5) * double(img.h) / double(oh) - 0.5;
        const i64 y0 = std::clamp<i64>(static_cast<i64>(std::floor(sy)), 0, img.h - 1);
        const i64 y1 = std::min(y0 + 1, img.h - 1);
        const double ay = std::clamp(sy - y0, 0.0, 1.0);
        for (i64 x = 0; x < ow; ++x) {
            const double sx = (x + 0.5) * double(img.w) / double(ow) - 0.5;
            const i64 x0 = std::clamp<i64>(static_cast<i64>(std::floor(sx)), 0, img.w - 1);
            const i64 x1 = std::min(x0 + 1, img.w - 1);
            const double ax = std::clamp(sx - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - ay) * ((1 - ax) * img.at(y0, x0, c) + ax * img.at(y0, x1, c)) +
                                 ay * ((1 - ax) * img.at(y1, x0, c) + ax * img.at(y1, x1, c));
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
            }
        }
    }
    return out;
}

inline BitMask resize_mask(const BitMask& m, i64 oh, i64 ow) {
    BitMask out;
    out.h = oh;
    out.w = ow;
    out.bits.resize(static_cast<size_t>(oh * ow));
    for (i64 y = 0; y < oh; ++y) {
        const i64 sy = std::clamp<i64>(static_cast<i64>((y + 0.5) * m.h / oh), 0, m.h - 1);
        for (i64 x = 0; x < ow; ++x) {
            const i64 sx = std::clamp<i64>(static_cast<i64>((x + 0.5) * m.w / ow), 0, m.w - 1);
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

// Random shortest-side rescale; normalized boxes are unchanged by design,
// masks follow the image.
inline DetectionSample scale_augment(const DetectionSample& sample, std::mt19937_64& rng,
                                     const ScaleAugmentSpec& spec = {}) {
    std::uniform_int_distribution<i64> pick(spec.min_short, spec.max_short);
    const i64 target = pick(rng);
    double s = double(target) / double(std::min(sample.image.h, sample.image.w));
    s = std::min(s, double(spec.max_long) / double(std::max(sample.image.h, sample.image.w)));
    const i64 oh = std::max<i64>(1, static_cast<i64>(std::lround(sample.image.h * s)));
    const i64 ow = std::max<i64>(1, static_cast<i64>(std::lround(sample.image.w * s)));
    DetectionSample out;
    out.id = sample.id;
    out.image = resize_image(sample.image, oh, ow);
    out.objects = sample.objects;
    for (auto& o : out.objects)
        if (o.has_mask) o.mask = resize_mask(o.mask, oh, ow);
    return out;
}

// Recompute the tight box of a mask, for augmentation consistency checks.
inline std::optional<std::array<double, 4>> mask_bbox(const BitMask& m) {
    i64 x0 = m.w, y0 = m.h, x1 = -1, y1 = -1;
    for (i64 y = 0; y < m.h; ++y)
        for (i64 x = 0; x < m.w; ++x)
            if (m.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return std::nullopt;
    return std::array<double, 4>{(x0 + x1 + 1) / 2.0 / m.w, (y0 + y1 + 1) / 2.0 / m.h,
                                 double(x1 - x0 + 1) / m.w, double(y1 - y0 + 1) / m.h};
}

}  // namespace vidt
