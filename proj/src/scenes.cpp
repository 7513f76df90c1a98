#include "vpt/scenes.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <fstream>
#include <random>
#include <set>

namespace vpt {

namespace {

// 5x5 bitmaps, one bit row per byte (msb unused).
constexpr std::array<std::array<uint8_t, 5>, kGlyphCount> kGlyphBitmaps = {{
    {0b01110, 0b10001, 0b10001, 0b10001, 0b10001},  // arch
    {0b00011, 0b00110, 0b01100, 0b11000, 0b10000},  // bolt
    {0b10001, 0b01010, 0b00100, 0b01010, 0b10001},  // crab
    {0b00000, 0b00100, 0b01010, 0b10001, 0b11111},  // dune
    {0b11111, 0b10000, 0b11110, 0b10000, 0b11111},  // echo
    {0b11111, 0b10000, 0b11110, 0b10000, 0b10000},  // fern
    {0b11111, 0b10001, 0b10001, 0b10001, 0b11111},  // gate
    {0b01110, 0b10001, 0b11111, 0b10001, 0b01110},  // hive
    {0b00100, 0b00100, 0b00100, 0b00100, 0b00100},  // iris
    {0b00001, 0b00001, 0b00001, 0b10001, 0b01110},  // jade
    {0b10001, 0b10010, 0b11100, 0b10010, 0b10001},  // kite
    {0b10000, 0b10000, 0b10000, 0b10000, 0b11111},  // lamp
    {0b10001, 0b11011, 0b10101, 0b10001, 0b10001},  // moss
    {0b10001, 0b11001, 0b10101, 0b10011, 0b10001},  // nook
    {0b01110, 0b10001, 0b10001, 0b10001, 0b01110},  // opal
    {0b11110, 0b10001, 0b11110, 0b10000, 0b10000},  // pine
}};

constexpr std::array<std::array<float, 3>, kColorCount> kColors = {{
    {1.0f, 0.15f, 0.15f},  // red
    {0.15f, 1.0f, 0.15f},  // green
    {0.25f, 0.35f, 1.0f},  // blue
    {1.0f, 1.0f, 0.2f},    // yellow
    {0.2f, 1.0f, 1.0f},    // cyan
    {1.0f, 0.25f, 1.0f},   // magenta
}};

constexpr std::array<float, 3> kBackground = {0.05f, 0.05f, 0.05f};

int glyph_pixel_scale(GlyphScale s) { return s == GlyphScale::Tiny ? 1 : 5; }

void validate(const SceneSpec& spec) {
    if (spec.canvas < spec.cells || spec.cells < 2)
        throw scene_error("SceneSpec: bad canvas/cells");
    if (spec.objects.empty()) throw scene_error("SceneSpec: needs at least one object");
    std::set<std::pair<int, int>> taken;
    for (const auto& o : spec.objects) {
        if (o.glyph < 0 || o.glyph >= kGlyphCount || o.color < 0 || o.color >= kColorCount)
            throw scene_error("SceneSpec: glyph/color id out of range");
        if (o.cell_x < 0 || o.cell_x >= spec.cells || o.cell_y < 0 || o.cell_y >= spec.cells)
            throw scene_error("SceneSpec: cell position out of range");
        if (!taken.emplace(o.cell_x, o.cell_y).second)
            throw scene_error("SceneSpec: overlapping objects");
    }
}

}  // namespace

const std::vector<std::string>& glyph_names() {
    static const std::vector<std::string> names{"arch", "bolt", "crab", "dune", "echo", "fern",
                                                "gate", "hive", "iris", "jade", "kite", "lamp",
                                                "moss", "nook", "opal", "pine"};
    return names;
}

const std::vector<std::string>& color_names() {
    static const std::vector<std::string> names{"red", "green", "blue", "yellow", "cyan",
                                                "magenta"};
    return names;
}

PixelBox placement_box(const SceneSpec& spec, const SceneObject& obj) {
    const int cell = spec.canvas / spec.cells;
    return PixelBox{obj.cell_x * cell, obj.cell_y * cell, (obj.cell_x + 1) * cell,
                    (obj.cell_y + 1) * cell};
}

Image render(const SceneSpec& spec) {
    validate(spec);
    Image img(spec.canvas, spec.canvas, kBackground);
    const int cell = spec.canvas / spec.cells;
    for (const auto& o : spec.objects) {
        const int px_scale = glyph_pixel_scale(o.scale);
        const int side = kGlyphBitmapSide * px_scale;
        const PixelBox box = placement_box(spec, o);
        const int off_x = box.x_min + (cell - side) / 2;
        const int off_y = box.y_min + (cell - side) / 2;
        const auto& bitmap = kGlyphBitmaps[o.glyph];
        const auto& rgb = kColors[o.color];
        for (int by = 0; by < kGlyphBitmapSide; ++by)
            for (int bx = 0; bx < kGlyphBitmapSide; ++bx) {
                if (!(bitmap[by] >> (kGlyphBitmapSide - 1 - bx) & 1)) continue;
                for (int dy = 0; dy < px_scale; ++dy)
                    for (int dx = 0; dx < px_scale; ++dx)
                        img.set_pixel(off_x + bx * px_scale + dx, off_y + by * px_scale + dy, rgb);
            }
    }
    return img;
}

// ---------------------------------------------------------------------------

std::string task_kind_name(TaskKind t) {
    switch (t) {
        case TaskKind::LocateTinyGlyph: return "locate-tiny-glyph";
        case TaskKind::IdentifyAtCell: return "identify-at-cell";
        case TaskKind::CountGlyphs: return "count-glyphs";
        case TaskKind::Caption: return "caption";
    }
    throw std::invalid_argument("task_kind_name: bad kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "locate-tiny-glyph") return TaskKind::LocateTinyGlyph;
    if (name == "identify-at-cell") return TaskKind::IdentifyAtCell;
    if (name == "count-glyphs") return TaskKind::CountGlyphs;
    if (name == "caption") return TaskKind::Caption;
    throw std::invalid_argument("task_kind_from_name: unknown task " + name);
}

namespace {

std::vector<std::pair<int, int>> pick_cells(int n, int cells, std::mt19937_64& rng) {
    std::vector<std::pair<int, int>> all;
    for (int y = 0; y < cells; ++y)
        for (int x = 0; x < cells; ++x) all.emplace_back(x, y);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(n);
    return all;
}

SourceRecord make_locate(uint64_t seed, int index) {
    std::mt19937_64 rng(seed * 1000003 + index);
    SceneSpec spec;
    spec.seed = rng();
    const int n = 3 + static_cast<int>(rng() % 4);  // 3..6 objects, distinct colors
    std::vector<int> colors{0, 1, 2, 3, 4, 5};
    std::shuffle(colors.begin(), colors.end(), rng);
    const auto cells = pick_cells(n, spec.cells, rng);
    for (int i = 0; i < n; ++i) {
        SceneObject o;
        o.glyph = static_cast<int>(rng() % kGlyphCount);
        o.color = colors[i];
        o.cell_x = cells[i].first;
        o.cell_y = cells[i].second;
        o.scale = GlyphScale::Tiny;
        spec.objects.push_back(o);
    }
    const int target = static_cast<int>(rng() % n);
    const SceneObject& t = spec.objects[target];

    SourceRecord rec;
    rec.id = "locate-" + std::to_string(seed) + "-" + std::to_string(index);
    rec.scene = spec;
    rec.question = "which glyph is the " + color_names()[t.color] + " one";
    rec.answer = glyph_names()[t.glyph];
    rec.gt_box = placement_box(spec, t);
    rec.task_type = TaskType::Region;
    rec.task_name = task_kind_name(TaskKind::LocateTinyGlyph);
    return rec;
}

SourceRecord make_identify(uint64_t seed, int index) {
    std::mt19937_64 rng(seed * 2000003 + index);
    SceneSpec spec;
    spec.seed = rng();
    const int n = 3 + static_cast<int>(rng() % 4);
    const auto cells = pick_cells(n, spec.cells, rng);
    for (int i = 0; i < n; ++i) {
        SceneObject o;
        o.glyph = static_cast<int>(rng() % kGlyphCount);
        o.color = static_cast<int>(rng() % kColorCount);
        o.cell_x = cells[i].first;
        o.cell_y = cells[i].second;
        o.scale = GlyphScale::Tiny;
        spec.objects.push_back(o);
    }
    const int target = static_cast<int>(rng() % n);
    const SceneObject& t = spec.objects[target];

    SourceRecord rec;
    rec.id = "identify-" + std::to_string(seed) + "-" + std::to_string(index);
    rec.scene = spec;
    rec.question = "which glyph is at col " + std::to_string(t.cell_x) + " row " +
                   std::to_string(t.cell_y);
    rec.answer = glyph_names()[t.glyph];
    rec.gt_box = placement_box(spec, t);
    rec.task_type = TaskType::Region;
    rec.task_name = task_kind_name(TaskKind::IdentifyAtCell);
    return rec;
}

SourceRecord make_count(uint64_t seed, int index) {
    std::mt19937_64 rng(seed * 3000017 + index);
    SceneSpec spec;
    spec.seed = rng();
    const int count = 1 + static_cast<int>(rng() % 6);
    const int extras = static_cast<int>(rng() % 3);
    const int color = static_cast<int>(rng() % kColorCount);
    const auto cells = pick_cells(count + extras, spec.cells, rng);
    for (int i = 0; i < count + extras; ++i) {
        SceneObject o;
        o.glyph = static_cast<int>(rng() % kGlyphCount);
        o.color = i < count ? color : static_cast<int>((color + 1 + rng() % (kColorCount - 1)) %
                                                       kColorCount);
        o.cell_x = cells[i].first;
        o.cell_y = cells[i].second;
        o.scale = GlyphScale::Large;
        spec.objects.push_back(o);
    }

    SourceRecord rec;
    rec.id = "count-" + std::to_string(seed) + "-" + std::to_string(index);
    rec.scene = spec;
    rec.question = "how many " + color_names()[color] + " glyphs";
    rec.answer = std::to_string(count);
    rec.task_type = TaskType::ReEncode;
    rec.task_name = task_kind_name(TaskKind::CountGlyphs);
    return rec;
}

SourceRecord make_caption(uint64_t seed, int index) {
    std::mt19937_64 rng(seed * 4000037 + index);
    SceneSpec spec;
    spec.seed = rng();
    const int n = 1 + static_cast<int>(rng() % 6);
    const auto cells = pick_cells(n, spec.cells, rng);
    for (int i = 0; i < n; ++i) {
        SceneObject o;
        o.glyph = static_cast<int>(rng() % kGlyphCount);
        o.color = static_cast<int>(rng() % kColorCount);
        o.cell_x = cells[i].first;
        o.cell_y = cells[i].second;
        o.scale = GlyphScale::Large;
        spec.objects.push_back(o);
    }
    SourceRecord rec;
    rec.id = "caption-" + std::to_string(seed) + "-" + std::to_string(index);
    rec.scene = spec;
    rec.question = "";
    rec.answer = std::to_string(n) + " objects";
    rec.task_type = TaskType::Plain;
    rec.task_name = task_kind_name(TaskKind::Caption);
    return rec;
}

}  // namespace

std::vector<SourceRecord> gen_records(TaskKind task, int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("gen_records: n must be >= 1");
    std::vector<SourceRecord> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        switch (task) {
            case TaskKind::LocateTinyGlyph: out.push_back(make_locate(seed, i)); break;
            case TaskKind::IdentifyAtCell: out.push_back(make_identify(seed, i)); break;
            case TaskKind::CountGlyphs: out.push_back(make_count(seed, i)); break;
            case TaskKind::Caption: out.push_back(make_caption(seed, i)); break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json scene_to_json(const SceneSpec& s) {
    nlohmann::json j;
    j["canvas"] = s.canvas;
    j["cells"] = s.cells;
    j["seed"] = s.seed;
    auto& objs = j["objects"] = nlohmann::json::array();
    for (const auto& o : s.objects)
        objs.push_back({{"glyph", o.glyph},
                        {"color", o.color},
                        {"cell_x", o.cell_x},
                        {"cell_y", o.cell_y},
                        {"scale", o.scale == GlyphScale::Tiny ? "tiny" : "large"}});
    return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.canvas = j.at("canvas").get<int>();
    s.cells = j.at("cells").get<int>();
    s.seed = j.at("seed").get<uint64_t>();
    for (const auto& jo : j.at("objects")) {
        SceneObject o;
        o.glyph = jo.at("glyph").get<int>();
        o.color = jo.at("color").get<int>();
        o.cell_x = jo.at("cell_x").get<int>();
        o.cell_y = jo.at("cell_y").get<int>();
        o.scale = jo.at("scale").get<std::string>() == "tiny" ? GlyphScale::Tiny
                                                              : GlyphScale::Large;
        s.objects.push_back(o);
    }
    return s;
}

}  // namespace

std::string record_to_json(const SourceRecord& rec) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["scene"] = scene_to_json(rec.scene);
    j["question"] = rec.question;
    j["answer"] = rec.answer;
    if (rec.gt_box)
        j["bbox"] = {rec.gt_box->x_min, rec.gt_box->y_min, rec.gt_box->x_max, rec.gt_box->y_max};
    j["task_type"] = rec.task_type == TaskType::Region     ? "region"
                     : rec.task_type == TaskType::ReEncode ? "reencode"
                                                           : "plain";
    j["task"] = rec.task_name;
    return j.dump();
}

SourceRecord record_from_json(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    SourceRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.scene = scene_from_json(j.at("scene"));
    rec.question = j.at("question").get<std::string>();
    rec.answer = j.at("answer").get<std::string>();
    if (j.contains("bbox")) {
        const auto b = j.at("bbox");
        rec.gt_box = PixelBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                              b.at(3).get<int>()};
    }
    const auto tt = j.at("task_type").get<std::string>();
    rec.task_type = tt == "region"     ? TaskType::Region
                    : tt == "reencode" ? TaskType::ReEncode
                                       : TaskType::Plain;
    rec.task_name = j.at("task").get<std::string>();
    return rec;
}

void save_records(const std::string& path, const std::vector<SourceRecord>& recs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_records: cannot open " + path);
    for (const auto& r : recs) out << record_to_json(r) << '\n';
}

std::vector<SourceRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_records: cannot open " + path);
    std::vector<SourceRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_json(line));
    }
    return out;
}

}  // namespace vpt
