#include "llmseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "llmseg/error.hpp"
#include "llmseg/rng.hpp"

namespace llmseg {

namespace {

std::string_view trim(std::string_view s) {
    const auto not_space = [](char c) { return !std::isspace(static_cast<unsigned char>(c)); };
    const auto begin = std::find_if(s.begin(), s.end(), not_space);
    const auto end = std::find_if(s.rbegin(), s.rend(), not_space).base();
    return begin < end ? std::string_view(begin, end) : std::string_view{};
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<json> read_json_lines(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    std::vector<json> out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string_view line = trim(std::string_view(text).substr(start, end - start));
        if (!line.empty()) {
            try {
                out.push_back(json::parse(line));
            } catch (const json::parse_error& e) {
                fail(ErrorCode::ParseError, path.string() + ": malformed JSON at byte " +
                                                std::to_string(start + e.byte) + " (" + e.what() + ")");
            }
        }
        start = end + 1;
    }
    return out;
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    if (name == "unassigned") return Split::Unassigned;
    fail(ErrorCode::ParseError, "unknown split '" + std::string(name) + "'");
}

// Fisher–Yates prefix: the first n positions of a partial shuffle.
std::vector<std::string> sample_prefix(std::vector<std::string> candidates, std::size_t n, Rng& rng) {
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.uniform_below(candidates.size() - i);
        std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(n);
    return candidates;
}

}  // namespace

std::string_view image_source_name(ImageSource source) {
    return source == ImageSource::Photographic ? "photographic" : "egocentric";
}

ImageSource parse_image_source(std::string_view name) {
    if (name == "photographic") return ImageSource::Photographic;
    if (name == "egocentric") return ImageSource::Egocentric;
    fail(ErrorCode::ParseError, "unknown image source '" + std::string(name) + "'");
}

std::vector<std::string> SourceRecord::category_names() const {
    std::vector<std::string> names;
    names.reserve(categories.size());
    for (const CategoryInstances& c : categories) names.push_back(c.name);
    return names;
}

void SourceRecord::validate() const {
    if (categories.empty()) fail(ErrorCode::InvalidArgument, "record '" + image_id + "' has no categories");
    std::set<std::string> seen;
    for (const CategoryInstances& c : categories) {
        if (!seen.insert(c.name).second) {
            fail(ErrorCode::InvalidArgument, "record '" + image_id + "' repeats category '" + c.name + "'");
        }
        for (const BinaryMask& m : c.instances) {
            if (m.height() != height || m.width() != width) {
                fail(ErrorCode::DimensionMismatch, "instance of '" + c.name + "' in '" + image_id +
                                                       "' does not match the image size");
            }
        }
    }
}

json source_record_to_json(const SourceRecord& record) {
    json categories = json::array();
    for (const CategoryInstances& c : record.categories) {
        json instances = json::array();
        for (const BinaryMask& m : c.instances) instances.push_back(mask_to_json(m));
        categories.push_back({{"name", c.name}, {"instances", std::move(instances)}});
    }
    return json{{"image_id", record.image_id},
                {"source", image_source_name(record.source)},
                {"w", record.width},
                {"h", record.height},
                {"categories", std::move(categories)}};
}

SourceRecord source_record_from_json(const json& value) {
    try {
        SourceRecord r;
        r.image_id = value.at("image_id").get<std::string>();
        r.source = parse_image_source(value.at("source").get<std::string>());
        r.width = value.at("w").get<std::size_t>();
        r.height = value.at("h").get<std::size_t>();
        for (const json& c : value.at("categories")) {
            CategoryInstances cat;
            cat.name = c.at("name").get<std::string>();
            for (const json& m : c.at("instances")) cat.instances.push_back(mask_from_json(m));
            r.categories.push_back(std::move(cat));
        }
        r.validate();
        return r;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("source record: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ParseError) throw;
        fail(ErrorCode::ParseError, std::string("source record: ") + e.what());
    }
}

std::vector<SourceRecord> read_source_corpus(const std::filesystem::path& path) {
    std::vector<SourceRecord> out;
    for (const json& line : read_json_lines(path)) out.push_back(source_record_from_json(line));
    return out;
}

void write_source_corpus(std::span<const SourceRecord> records, const std::filesystem::path& path) {
    std::string text;
    for (const SourceRecord& r : records) text += source_record_to_json(r).dump() + "\n";
    write_file(path, text);
}

Complexity classify_complexity(const SourceRecord& record) {
    std::set<std::string> distinct;
    for (const CategoryInstances& c : record.categories) distinct.insert(c.name);
    if (distinct.size() < 2) return Complexity::Reject;
    if (distinct.size() < 6) return Complexity::Simple;
    return Complexity::Complex;
}

std::vector<std::string> SampleSelection::all() const {
    std::vector<std::string> out;
    out.insert(out.end(), simple.begin(), simple.end());
    out.insert(out.end(), complex.begin(), complex.end());
    out.insert(out.end(), egocentric.begin(), egocentric.end());
    std::sort(out.begin(), out.end());
    return out;
}

json selection_to_json(const SampleSelection& selection) {
    return json{{"simple", selection.simple}, {"complex", selection.complex}, {"egocentric", selection.egocentric}};
}

SampleSelection selection_from_json(const json& value) {
    try {
        SampleSelection s;
        s.simple = value.at("simple").get<std::vector<std::string>>();
        s.complex = value.at("complex").get<std::vector<std::string>>();
        s.egocentric = value.at("egocentric").get<std::vector<std::string>>();
        return s;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("sample selection: ") + e.what());
    }
}

SampleSelection stratified_sample(std::span<const SourceRecord> corpus, const StratumCounts& counts,
                                  std::uint64_t seed) {
    std::vector<std::string> simple;
    std::vector<std::string> complex;
    std::vector<std::string> egocentric;
    for (const SourceRecord& r : corpus) {
        if (r.source == ImageSource::Egocentric) {
            if (r.categories.size() > 2) egocentric.push_back(r.image_id);
            continue;
        }
        switch (classify_complexity(r)) {
            case Complexity::Simple: simple.push_back(r.image_id); break;
            case Complexity::Complex: complex.push_back(r.image_id); break;
            case Complexity::Reject: break;
        }
    }
    std::string deficit;
    const auto check = [&](const char* name, std::size_t want, std::size_t have) {
        if (want > have) {
            deficit += std::string(deficit.empty() ? "" : ", ") + name + " short by " + std::to_string(want - have) +
                       " (" + std::to_string(have) + " available)";
        }
    };
    check("simple", counts.simple, simple.size());
    check("complex", counts.complex, complex.size());
    check("egocentric", counts.egocentric, egocentric.size());
    if (!deficit.empty()) fail(ErrorCode::CorpusTooSmall, deficit);

    for (auto* stratum : {&simple, &complex, &egocentric}) std::sort(stratum->begin(), stratum->end());
    Rng rng(seed);
    SampleSelection out;
    out.simple = sample_prefix(std::move(simple), counts.simple, rng);
    out.complex = sample_prefix(std::move(complex), counts.complex, rng);
    out.egocentric = sample_prefix(std::move(egocentric), counts.egocentric, rng);
    return out;
}

PromptBundle PromptBundle::from_template(std::string question_template) {
    const auto occurrences = [&](std::string_view needle) {
        std::size_t n = 0;
        for (std::size_t pos = question_template.find(needle); pos != std::string::npos;
             pos = question_template.find(needle, pos + needle.size())) {
            ++n;
        }
        return n;
    };
    for (std::string_view placeholder : {kSummaryPlaceholder, kObjectsPlaceholder}) {
        const std::size_t n = occurrences(placeholder);
        if (n != 1) {
            fail(ErrorCode::InvalidTemplate, "template must contain " + std::string(placeholder) +
                                                 " exactly once (found " + std::to_string(n) + ")");
        }
    }
    return PromptBundle{build_describer_prompt(), std::move(question_template)};
}

PromptBundle load_prompt_bundle(const std::filesystem::path& template_path) {
    return PromptBundle::from_template(read_file(template_path));
}

std::string build_describer_prompt() { return "Please describe the content in this image within 10 sentences."; }

std::string build_question_prompt(std::string_view summary, std::span<const std::string> objects,
                                  const PromptBundle& bundle) {
    if (objects.empty()) fail(ErrorCode::EmptyObjects, "question prompt needs at least one object");
    const std::string& tpl = bundle.question_template;
    const std::size_t s_pos = tpl.find(kSummaryPlaceholder);
    const std::size_t o_pos = tpl.find(kObjectsPlaceholder);
    if (s_pos == std::string::npos || o_pos == std::string::npos ||
        tpl.find(kSummaryPlaceholder, s_pos + 1) != std::string::npos ||
        tpl.find(kObjectsPlaceholder, o_pos + 1) != std::string::npos) {
        fail(ErrorCode::InvalidTemplate, "template must contain each placeholder exactly once");
    }
    std::string joined;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (i > 0) joined += ", ";
        joined += objects[i];
    }
    struct Slot {
        std::size_t pos;
        std::size_t len;
        std::string_view text;
    };
    Slot first{s_pos, kSummaryPlaceholder.size(), summary};
    Slot second{o_pos, kObjectsPlaceholder.size(), joined};
    if (second.pos < first.pos) std::swap(first, second);
    std::string out;
    out.reserve(tpl.size() + summary.size() + joined.size());
    out.append(tpl, 0, first.pos);
    out.append(first.text);
    out.append(tpl, first.pos + first.len, second.pos - first.pos - first.len);
    out.append(second.text);
    out.append(tpl, second.pos + second.len, std::string::npos);
    return out;
}

ParsedResponse parse_question_response(std::string_view response, std::span<const std::string> known_categories) {
    ParsedResponse out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= response.size()) {
        std::size_t end = response.find('\n', start);
        if (end == std::string_view::npos) end = response.size();
        const std::string_view line = trim(response.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (line.empty()) continue;
        const auto diag = [&](const std::string& why) {
            out.diagnostics.push_back("line " + std::to_string(line_no) + ": " + why);
        };

        std::size_t i = 0;
        while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
        if (i == 0 || i >= line.size() || line[i] != '.') {
            diag("not a numbered item");
            continue;
        }
        const std::string_view body = line.substr(i + 1);
        const std::size_t sep = body.find("||");
        if (sep == std::string_view::npos) {
            diag("missing '||' category separator");
            continue;
        }
        ParsedQuestion q;
        q.question = std::string(trim(body.substr(0, sep)));
        if (q.question.empty()) {
            diag("empty question");
            continue;
        }
        std::string_view cats = body.substr(sep + 2);
        while (!cats.empty()) {
            const std::size_t semi = cats.find(';');
            const std::string_view name = trim(cats.substr(0, semi));
            cats = semi == std::string_view::npos ? std::string_view{} : cats.substr(semi + 1);
            if (name.empty()) continue;
            const auto exact = std::find(known_categories.begin(), known_categories.end(), name);
            const auto folded = exact != known_categories.end()
                                    ? exact
                                    : std::find_if(known_categories.begin(), known_categories.end(),
                                                   [&](const std::string& k) { return lowercase(k) == lowercase(name); });
            if (folded != known_categories.end()) {
                if (std::find(q.categories.begin(), q.categories.end(), *folded) == q.categories.end()) {
                    q.categories.push_back(*folded);
                }
            } else {
                q.unresolved.emplace_back(name);
                diag("unresolved category '" + std::string(name) + "'");
            }
        }
        if (q.categories.empty() && q.unresolved.empty()) {
            diag("no target categories");
            continue;
        }
        out.questions.push_back(std::move(q));
    }
    if (out.questions.empty()) fail(ErrorCode::NoQuestionsFound, "response contains no parseable question");
    return out;
}

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Unassigned: return "unassigned";
    }
    return "unassigned";
}

AssembledRecord assemble_record(const SourceRecord& source, const ParsedResponse& parsed) {
    AssembledRecord out;
    ManifestRecord& rec = out.record;
    rec.image_id = source.image_id;
    rec.source = source.source;
    rec.width = source.width;
    rec.height = source.height;
    for (std::size_t qi = 0; qi < parsed.questions.size(); ++qi) {
        const ParsedQuestion& q = parsed.questions[qi];
        std::vector<BinaryMask> masks;
        std::vector<std::string> targets;
        for (const std::string& name : q.categories) {
            const auto it = std::find_if(source.categories.begin(), source.categories.end(),
                                         [&](const CategoryInstances& c) { return c.name == name; });
            if (it == source.categories.end() || it->instances.empty()) continue;
            masks.insert(masks.end(), it->instances.begin(), it->instances.end());
            targets.push_back(name);
        }
        const std::string where = source.image_id + " question " + std::to_string(qi + 1);
        if (masks.empty()) {
            out.diagnostics.push_back(where + ": no resolvable target category, dropped");
            continue;
        }
        BinaryMask answer = union_masks(masks);
        if (answer.none()) {
            out.diagnostics.push_back(where + ": target instances are empty, dropped");
            continue;
        }
        rec.qa_pairs.push_back({q.question, std::move(answer), std::move(targets)});
    }
    if (rec.qa_pairs.empty()) fail(ErrorCode::NoValidPairs, "record '" + source.image_id + "' has no valid pairs");
    return out;
}

std::vector<ManifestRecord> assign_splits(std::vector<ManifestRecord> records, const SplitRatios& ratios,
                                          std::uint64_t seed) {
    if (records.empty()) fail(ErrorCode::EmptyInput, "no records to split");
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        fail(ErrorCode::InvalidArgument, "split ratios must be nonnegative and sum to 1");
    }
    const std::size_t n = records.size();
    // The epsilon absorbs representation error such as 14·(1/14) = 0.999….
    const auto share = [n](double ratio) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
    };
    const std::size_t n_val = share(ratios.val);
    const std::size_t n_test = share(ratios.test);
    const std::size_t n_train = n - n_val - n_test;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    for (std::size_t pos = 0; pos < n; ++pos) {
        records[order[pos]].split = pos < n_train ? Split::Train : pos < n_train + n_val ? Split::Val : Split::Test;
    }
    return records;
}

json manifest_record_to_json(const ManifestRecord& record) {
    json qa = json::array();
    for (const QAPair& p : record.qa_pairs) {
        qa.push_back({{"q", p.question}, {"mask", mask_to_json(p.answer_mask)}, {"cats", p.target_categories}});
    }
    return json{{"image_id", record.image_id},
                {"source", image_source_name(record.source)},
                {"w", record.width},
                {"h", record.height},
                {"split", split_name(record.split)},
                {"qa", std::move(qa)}};
}

ManifestRecord manifest_record_from_json(const json& value) {
    try {
        ManifestRecord r;
        r.image_id = value.at("image_id").get<std::string>();
        r.source = parse_image_source(value.at("source").get<std::string>());
        r.width = value.at("w").get<std::size_t>();
        r.height = value.at("h").get<std::size_t>();
        r.split = parse_split(value.at("split").get<std::string>());
        for (const json& p : value.at("qa")) {
            QAPair pair;
            pair.question = p.at("q").get<std::string>();
            pair.answer_mask = mask_from_json(p.at("mask"));
            pair.target_categories = p.at("cats").get<std::vector<std::string>>();
            r.qa_pairs.push_back(std::move(pair));
        }
        return r;
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("manifest record: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ParseError) throw;
        fail(ErrorCode::ParseError, std::string("manifest record: ") + e.what());
    }
}

std::string encode_manifest(std::span<const ManifestRecord> records) {
    std::string text;
    for (const ManifestRecord& r : records) text += manifest_record_to_json(r).dump() + "\n";
    return text;
}

void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path) {
    write_file(path, encode_manifest(records));
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::vector<ManifestRecord> out;
    for (const json& line : read_json_lines(path)) out.push_back(manifest_record_from_json(line));
    return out;
}

std::size_t count_words(std::string_view text) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c));
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

DatasetStats dataset_stats(std::span<const ManifestRecord> manifest) {
    if (manifest.empty()) fail(ErrorCode::EmptyInput, "statistics of an empty manifest");
    DatasetStats s;
    s.images = manifest.size();
    std::size_t words = 0;
    std::set<std::string> categories;
    for (const ManifestRecord& r : manifest) {
        s.pairs += r.qa_pairs.size();
        for (const QAPair& p : r.qa_pairs) {
            words += count_words(p.question);
            categories.insert(p.target_categories.begin(), p.target_categories.end());
        }
        if (r.split == Split::Train) ++s.train_images;
        if (r.split == Split::Val) ++s.val_images;
        if (r.split == Split::Test) ++s.test_images;
    }
    s.avg_pairs_per_image = static_cast<double>(s.pairs) / static_cast<double>(s.images);
    s.avg_question_words = s.pairs == 0 ? 0.0 : static_cast<double>(words) / static_cast<double>(s.pairs);
    s.distinct_categories = categories.size();
    return s;
}

json stats_to_json(const DatasetStats& s) {
    return json{{"images", s.images},
                {"pairs", s.pairs},
                {"avg_pairs_per_image", s.avg_pairs_per_image},
                {"avg_question_words", s.avg_question_words},
                {"distinct_categories", s.distinct_categories},
                {"splits", {{"train", s.train_images}, {"val", s.val_images}, {"test", s.test_images}}}};
}

std::string format_stats(const DatasetStats& s) {
    char buffer[512];
    std::snprintf(buffer, sizeof buffer,
                  "images: %zu\npairs: %zu\navg pairs/image: %.2f\navg question words: %.2f\n"
                  "distinct categories: %zu\nsplits: train %zu, val %zu, test %zu\n",
                  s.images, s.pairs, s.avg_pairs_per_image, s.avg_question_words, s.distinct_categories,
                  s.train_images, s.val_images, s.test_images);
    return buffer;
}

std::vector<SourceRecord> synth_source_corpus(std::size_t n, std::uint64_t seed) {
    static const std::vector<std::string> vocabulary = {
        "apple",      "backpack",  "banana",   "bench",     "bicycle",  "book",     "bottle",   "bowl",
        "cabinet",    "car",       "chair",    "clock",     "cup",      "curtain",  "dog",      "door",
        "faucet",     "fork",      "handbag",  "keyboard",  "knife",    "lamp",     "laptop",   "microwave",
        "mirror",     "mug",       "oven",     "pillow",    "plant",    "plate",    "refrigerator", "remote",
        "shoe",       "sink",      "sofa",     "spoon",     "table",    "television", "towel",  "umbrella"};
    Rng rng(seed);
    std::vector<SourceRecord> out;
    out.reserve(n);
    char id[32];
    for (std::size_t i = 0; i < n; ++i) {
        SourceRecord r;
        std::snprintf(id, sizeof id, "img%06zu", i);
        r.image_id = id;
        r.source = rng.uniform01() < 0.25 ? ImageSource::Egocentric : ImageSource::Photographic;
        r.height = static_cast<std::size_t>(rng.uniform_int(24, 48));
        r.width = static_cast<std::size_t>(rng.uniform_int(24, 48));
        const std::size_t n_cats = static_cast<std::size_t>(rng.uniform_int(1, 10));
        std::vector<std::string> names = vocabulary;
        for (std::size_t c = 0; c < n_cats; ++c) {
            const std::size_t j = c + rng.uniform_below(names.size() - c);
            std::swap(names[c], names[j]);
            CategoryInstances cat{names[c], {}};
            const std::size_t n_inst = static_cast<std::size_t>(rng.uniform_int(1, 3));
            for (std::size_t k = 0; k < n_inst; ++k) {
                const auto h = rng.uniform_int(2, static_cast<std::int64_t>(r.height) / 2);
                const auto w = rng.uniform_int(2, static_cast<std::int64_t>(r.width) / 2);
                const auto r0 = rng.uniform_int(0, static_cast<std::int64_t>(r.height) - h);
                const auto c0 = rng.uniform_int(0, static_cast<std::int64_t>(r.width) - w);
                cat.instances.push_back(BinaryMask::rectangle(r.height, r.width, r0, c0, r0 + h, c0 + w));
            }
            r.categories.push_back(std::move(cat));
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace llmseg
