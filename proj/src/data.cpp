#include "uld/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "uld/common.hpp"
#include "uld/imageio.hpp"

namespace fs = std::filesystem;

namespace uld {

// ---------------------------------------------------------------------------
// Directory datasets
// ---------------------------------------------------------------------------

Dataset load_image_dataset(const std::string& root_dir, const std::string& manifest_name,
                           int target_size) {
    const fs::path root(root_dir);
    const fs::path manifest = root / manifest_name;
    std::ifstream mf(manifest);
    if (!mf) throw IoError("cannot open manifest: " + manifest.string());
    std::vector<std::string> rels;
    std::string line;
    while (std::getline(mf, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) rels.push_back(line);
    }
    if (rels.empty()) throw InputError("empty dataset: " + manifest.string());

    std::map<std::string, std::vector<Point2>> anno;
    const fs::path anno_path = root / "annotations.csv";
    if (fs::exists(anno_path)) {
        const LandmarkTable t = read_landmarks(anno_path.string());
        for (size_t i = 0; i < t.ids.size(); ++i) anno[t.ids[i]] = t.points[i];
    }

    Dataset ds;
    ds.split = root_dir;
    ds.image_size = target_size;
    for (const std::string& rel : rels) {
        const fs::path p = root / rel;
        if (!fs::exists(p)) throw IoError("missing file: " + p.string());
        Tensor<double> img;
        try {
            img = read_image(p.string());
        } catch (const InputError& e) {
            log::warn(std::string("skipping corrupt image: ") + e.what());
            ++ds.skipped;
            continue;
        }
        const double sx = static_cast<double>(target_size) / img.dim(2);
        const double sy = static_cast<double>(target_size) / img.dim(1);
        DatasetItem item;
        item.id = rel;
        item.image = resize_bilinear(img, target_size, target_size);
        auto it = anno.find(rel);
        if (it != anno.end()) {
            std::vector<Point2> pts = it->second;
            for (Point2& q : pts) {
                q.x *= sx;
                q.y *= sy;
            }
            item.landmarks = std::move(pts);
        }
        ds.items.push_back(std::move(item));
    }
    if (ds.items.empty()) throw InputError("empty dataset after skipping corrupt images");
    return ds;
}

// ---------------------------------------------------------------------------
// Toy sprites
// ---------------------------------------------------------------------------

void ToyConfig::validate() const {
    if (count < 1) throw ConfigError("toydata: count must be >= 1");
    if (image_size < 32) throw ConfigError("toydata: size must be >= 32");
    if (clutter < 0) throw ConfigError("toydata: clutter must be >= 0");
}

namespace {

struct Rgb {
    double r, g, b;
};

// Painted with a 4x4 supersampled coverage test.
void paint_ellipse(Tensor<double>& img, double cx, double cy, double rx, double ry, double angle,
                   const Rgb& color) {
    const int H = img.dim(1), W = img.dim(2);
    const double rmax = std::max(rx, ry) + 1.5;
    const int x0 = std::max(0, static_cast<int>(cx - rmax));
    const int x1 = std::min(W - 1, static_cast<int>(cx + rmax) + 1);
    const int y0 = std::max(0, static_cast<int>(cy - rmax));
    const int y1 = std::min(H - 1, static_cast<int>(cy + rmax) + 1);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            int inside = 0;
            // pixel (x, y) covers the unit square centered on the integer
            // point, matching the point-sample convention of the warps
            for (int s = 0; s < 16; ++s) {
                const double px = x - 0.375 + 0.25 * (s & 3) - cx;
                const double py = y - 0.375 + 0.25 * (s >> 2) - cy;
                const double fx = (ca * px + sa * py) / rx;
                const double fy = (-sa * px + ca * py) / ry;
                if (fx * fx + fy * fy <= 1.0) ++inside;
            }
            if (!inside) continue;
            const double a = inside / 16.0;
            img.at(0, y, x) = (1 - a) * img.at(0, y, x) + a * color.r;
            img.at(1, y, x) = (1 - a) * img.at(1, y, x) + a * color.g;
            img.at(2, y, x) = (1 - a) * img.at(2, y, x) + a * color.b;
        }
}

void paint_rect(Tensor<double>& img, double cx, double cy, double hw, double hh, const Rgb& color) {
    const int H = img.dim(1), W = img.dim(2);
    const int x0 = std::max(0, static_cast<int>(cx - hw));
    const int x1 = std::min(W - 1, static_cast<int>(cx + hw));
    const int y0 = std::max(0, static_cast<int>(cy - hh));
    const int y1 = std::min(H - 1, static_cast<int>(cy + hh));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            img.at(0, y, x) = color.r;
            img.at(1, y, x) = color.g;
            img.at(2, y, x) = color.b;
        }
}

double uni(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Rgb random_color(std::mt19937_64& rng, double lo, double hi) {
    return {uni(rng, lo, hi), uni(rng, lo, hi), uni(rng, lo, hi)};
}

}  // namespace

ToySample synthesize_toy_sample(const ToyConfig& cfg, int index) {
    cfg.validate();
    std::seed_seq seq{static_cast<uint64_t>(cfg.seed), static_cast<uint64_t>(index),
                      uint64_t{0x746f79ULL}};
    std::mt19937_64 rng(seq);
    const int L = cfg.image_size;

    ToySample out;
    out.image = Tensor<double>({3, L, L});
    const Rgb bg = random_color(rng, 0.05, 0.45);
    for (int y = 0; y < L; ++y)
        for (int x = 0; x < L; ++x) {
            out.image.at(0, y, x) = bg.r;
            out.image.at(1, y, x) = bg.g;
            out.image.at(2, y, x) = bg.b;
        }

    // Distractor clutter, drawn before (so behind) the face.
    for (int i = 0; i < cfg.clutter; ++i) {
        const Rgb c = random_color(rng, 0.0, 1.0);
        const double cx = uni(rng, 0, L - 1), cy = uni(rng, 0, L - 1);
        if (uni(rng, 0, 1) < 0.5)
            paint_ellipse(out.image, cx, cy, uni(rng, 0.02 * L, 0.09 * L),
                          uni(rng, 0.02 * L, 0.09 * L), uni(rng, -1.5, 1.5), c);
        else
            paint_rect(out.image, cx, cy, uni(rng, 0.02 * L, 0.08 * L),
                       uni(rng, 0.02 * L, 0.08 * L), c);
    }

    // Face pose.
    const double cx = (L - 1) / 2.0 + uni(rng, -0.08, 0.08) * L;
    const double cy = (L - 1) / 2.0 + uni(rng, -0.08, 0.08) * L;
    const double phi = uni(rng, -0.26, 0.26);
    const double ry = uni(rng, 0.28, 0.36) * L;       // head semi-axis (vertical)
    const double rx = ry * uni(rng, 0.72, 0.88);      // head narrower than tall
    const double ca = std::cos(phi), sa = std::sin(phi);
    auto face_to_img = [&](double fx, double fy) {
        return Point2{cx + ca * fx - sa * fy, cy + sa * fx + ca * fy};
    };

    const Rgb skin = {uni(rng, 0.55, 0.95), uni(rng, 0.45, 0.8), uni(rng, 0.35, 0.7)};
    paint_ellipse(out.image, cx, cy, rx, ry, phi, skin);

    // Eyes.
    const double ex = rx * uni(rng, 0.42, 0.52);
    const double ey = ry * uni(rng, 0.25, 0.40);
    const double re = rx * uni(rng, 0.14, 0.20);
    const Rgb sclera{0.95, 0.95, 0.95};
    const Rgb pupil = random_color(rng, 0.0, 0.25);
    const Point2 le = face_to_img(-ex, -ey);
    const Point2 rk = face_to_img(+ex, -ey);
    paint_ellipse(out.image, le.x, le.y, re, re * 0.8, phi, sclera);
    paint_ellipse(out.image, rk.x, rk.y, re, re * 0.8, phi, sclera);
    paint_ellipse(out.image, le.x, le.y, re * 0.45, re * 0.45, 0, pupil);
    paint_ellipse(out.image, rk.x, rk.y, re * 0.45, re * 0.45, 0, pupil);

    // Nose.
    const double ny = ry * uni(rng, 0.0, 0.15);
    const Rgb nose_c = {skin.r * 0.7, skin.g * 0.55, skin.b * 0.55};
    const Point2 nose = face_to_img(0, ny);
    paint_ellipse(out.image, nose.x, nose.y, rx * uni(rng, 0.10, 0.14), ry * uni(rng, 0.12, 0.17),
                  phi, nose_c);

    // Mouth: an elongated ellipse; landmarks are its horizontal extremes.
    const double my = ry * uni(rng, 0.48, 0.62);
    const double mw = rx * uni(rng, 0.38, 0.52);
    const double mh = ry * uni(rng, 0.07, 0.13);
    const Rgb mouth_c = {uni(rng, 0.55, 0.85), uni(rng, 0.05, 0.25), uni(rng, 0.1, 0.3)};
    const Point2 mc = face_to_img(0, my);
    paint_ellipse(out.image, mc.x, mc.y, mw, mh, phi, mouth_c);

    out.landmarks = {le, rk, nose, face_to_img(-mw, my), face_to_img(+mw, my)};
    return out;
}

Dataset synthesize_toy_dataset(const ToyConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.split = "toy";
    ds.image_size = cfg.image_size;
    ds.items.reserve(static_cast<size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) {
        ToySample s = synthesize_toy_sample(cfg, i);
        char name[32];
        std::snprintf(name, sizeof(name), "images/%05d.png", i);
        ds.items.push_back({name, std::move(s.image), std::move(s.landmarks)});
    }
    return ds;
}

void write_toy_dataset(const std::string& dir, const ToyConfig& cfg) {
    cfg.validate();
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoError("cannot write manifest in " + dir);
    LandmarkTable table;
    for (int i = 0; i < cfg.count; ++i) {
        ToySample s = synthesize_toy_sample(cfg, i);
        char name[32];
        std::snprintf(name, sizeof(name), "images/%05d.png", i);
        write_image((fs::path(dir) / name).string(), s.image);
        manifest << name << "\n";
        table.ids.emplace_back(name);
        table.points.push_back(std::move(s.landmarks));
    }
    write_landmarks((fs::path(dir) / "annotations.csv").string(), table);
}

// ---------------------------------------------------------------------------
// Landmark CSV
// ---------------------------------------------------------------------------

LandmarkTable read_landmarks(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw InputError(path + ": missing header");
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line != "image_id,point_index,x_px,y_px")
        throw InputError(path + ": bad header, expected image_id,point_index,x_px,y_px");

    LandmarkTable t;
    std::map<std::string, size_t> index;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, idx_s, x_s, y_s, extra;
        if (!std::getline(ss, id, ',') || !std::getline(ss, idx_s, ',') ||
            !std::getline(ss, x_s, ',') || !std::getline(ss, y_s, ','))
            throw InputError(path + ":" + std::to_string(lineno) + ": expected 4 fields");
        if (std::getline(ss, extra, ','))
            throw InputError(path + ":" + std::to_string(lineno) + ": expected 4 fields");
        size_t pos = 0;
        int pi;
        double x, y;
        try {
            pi = std::stoi(idx_s, &pos);
            if (pos != idx_s.size()) throw std::invalid_argument("");
            x = std::stod(x_s, &pos);
            if (pos != x_s.size()) throw std::invalid_argument("");
            y = std::stod(y_s, &pos);
            if (pos != y_s.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw InputError(path + ":" + std::to_string(lineno) + ": malformed row");
        }
        auto [it, inserted] = index.try_emplace(id, t.ids.size());
        if (inserted) {
            t.ids.push_back(id);
            t.points.emplace_back();
        }
        auto& pts = t.points[it->second];
        if (pi < 0) throw InputError(path + ":" + std::to_string(lineno) + ": negative index");
        if (static_cast<size_t>(pi) >= pts.size()) pts.resize(static_cast<size_t>(pi) + 1);
        pts[static_cast<size_t>(pi)] = {x, y};
    }
    return t;
}

void write_landmarks(const std::string& path, const LandmarkTable& table) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "image_id,point_index,x_px,y_px\n";
    char buf[96];
    for (size_t i = 0; i < table.ids.size(); ++i)
        for (size_t k = 0; k < table.points[i].size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g,%.17g", table.ids[i].c_str(), k,
                          table.points[i][k].x, table.points[i][k].y);
            f << buf << "\n";
        }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace uld
