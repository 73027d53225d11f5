#include "sqlsynth/linking.hpp"

#include "sqlsynth/prompts.hpp"
#include "sqlsynth/sql_analysis.hpp"
#include "sqlsynth/sqlite_db.hpp"
#include "sqlsynth/text_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace sqlsynth {

namespace {

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words{
        "a",     "about", "above", "after", "all",   "also",  "am",    "an",    "and",   "any",   "are",
        "as",    "at",    "be",    "been",  "being", "below", "between", "both", "but",  "by",    "can",
        "could", "did",   "do",    "does",  "doing", "each",  "find",  "for",   "from",  "give",  "had",
        "has",   "have",  "having", "he",   "her",   "here",  "his",   "how",   "i",     "if",    "in",
        "into",  "is",    "it",    "its",   "list",  "me",    "more",  "most",  "much",  "my",    "name",
        "names", "of",    "on",    "only",  "or",    "other", "our",   "please", "show", "she",   "should",
        "so",    "some",  "such",  "tell",  "than",  "that",  "the",   "their", "them",  "then",  "there",
        "these", "they",  "this",  "those", "to",    "under", "up",    "was",   "we",    "were",  "what",
        "when",  "where", "which", "while", "who",   "whom",  "whose", "why",   "will",  "with",  "would",
        "you",   "your"};
    return words;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::vector<std::string> unique_tokens(std::string_view text) {
    auto toks = tokenize_words(text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    return toks;
}

void sort_scored(std::vector<Scored>& v) {
    std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
}

std::unordered_map<std::string, std::size_t> index_ids(const std::vector<T2SExample>& corpus) {
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!by_id.emplace(corpus[i].id, i).second) throw std::invalid_argument("duplicate example id: " + corpus[i].id);
    }
    return by_id;
}

std::string digest_of(const std::vector<T2SExample>& corpus) {
    std::string blob;
    for (const auto& e : corpus) blob += e.id + "\x1f" + e.question + "\x1f" + e.sql + "\x1e";
    return sha256_hex(blob);
}

constexpr std::uint64_t mersenne61 = (std::uint64_t{1} << 61) - 1;

std::uint64_t mulmod61(std::uint64_t a, std::uint64_t b) {
    const auto p = static_cast<unsigned __int128>(a) * b;
    std::uint64_t r = static_cast<std::uint64_t>(p & mersenne61) + static_cast<std::uint64_t>(p >> 61);
    if (r >= mersenne61) r -= mersenne61;
    return r;
}

std::uint64_t band_key(const std::vector<std::uint64_t>& sig, std::size_t start, std::size_t rows) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = start; i < start + rows; ++i) {
        h ^= sig[i];
        h *= 0x100000001b3ULL;
        h ^= h >> 29;
    }
    return h;
}

}  // namespace

// ---------------------------------------------------------------------------

KeywordSet make_keyword_set(const std::vector<std::string>& keywords) {
    KeywordSet ks;
    std::set<std::string> seen;
    for (const auto& k : keywords) {
        auto t = trim(k);
        if (t.empty() || !seen.insert(to_lower(t)).second) continue;
        ks.keywords.push_back(std::move(t));
    }
    if (ks.keywords.size() == 1) {
        ks.pairs.emplace_back(ks.keywords[0], ks.keywords[0]);
        return ks;
    }
    for (std::size_t i = 0; i < ks.keywords.size(); ++i) {
        for (std::size_t j = i + 1; j < ks.keywords.size(); ++j) {
            auto a = ks.keywords[i];
            auto b = ks.keywords[j];
            if (b < a) std::swap(a, b);
            ks.pairs.emplace_back(std::move(a), std::move(b));
        }
    }
    std::sort(ks.pairs.begin(), ks.pairs.end());
    return ks;
}

std::vector<std::string> fallback_keywords(std::string_view question, std::string_view hint) {
    std::vector<std::string> out;
    for (const auto& w : tokenize_words(std::string(question) + " " + std::string(hint))) {
        if (w.size() < 2 || stopwords().count(w)) continue;
        if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    }
    return out;
}

KeywordSet extract_keywords(std::string_view question, std::string_view hint, LlmGateway* gateway,
                            std::vector<Diagnostic>* diagnostics) {
    if (trim(question).empty()) throw std::invalid_argument("question must not be empty");
    if (gateway) {
        LlmRequest r;
        r.template_id = std::string(templates::keywords);
        r.rendered_prompt = render_prompt(templates::keywords, {{"QUESTION", std::string(question)},
                                                                {"HINT", hint.empty() ? "(none)" : std::string(hint)}});
        r.purpose = Purpose::keywords;
        r.temperature = default_temperature(Purpose::keywords);
        try {
            const auto j = parse_json_object(gateway->complete(r).text, {"keywords"}, {"keywords"});
            auto ks = make_keyword_set(j.at("keywords").get<std::vector<std::string>>());
            if (!ks.keywords.empty()) return ks;
            if (diagnostics) diagnostics->push_back({"keywords", "", "model returned no keywords"});
        } catch (const std::exception& e) {
            if (diagnostics) diagnostics->push_back({"keywords", "", std::string("fallback tokenizer: ") + e.what()});
        }
    }
    return make_keyword_set(fallback_keywords(question, hint));
}

// ---------------------------------------------------------------------------

std::vector<std::string> document_tokens(const T2SExample& e) { return tokenize_words(e.question + " " + e.sql); }

Bm25Index::Bm25Index(std::vector<T2SExample> corpus, double k1, double b)
    : corpus_(std::move(corpus)), k1_(k1), b_(b) {
    if (corpus_.empty()) throw std::invalid_argument("BM25 corpus must not be empty");
    if (k1_ < 0 || b_ < 0 || b_ > 1) throw std::invalid_argument("BM25 needs k1 >= 0 and b in [0, 1]");
    by_id_ = index_ids(corpus_);
    std::size_t total = 0;
    for (std::size_t d = 0; d < corpus_.size(); ++d) {
        const auto toks = document_tokens(corpus_[d]);
        doc_len_.push_back(toks.size());
        total += toks.size();
        std::map<std::string, std::size_t> tf;
        for (const auto& t : toks) ++tf[t];
        for (const auto& [term, n] : tf) postings_[term].push_back({d, n});
    }
    avgdl_ = static_cast<double>(total) / static_cast<double>(corpus_.size());
    digest_ = digest_of(corpus_);
}

double Bm25Index::idf(const std::string& term) const {
    const auto it = postings_.find(term);
    const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
    const double n = static_cast<double>(corpus_.size());
    return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double Bm25Index::score(std::string_view query, std::size_t doc) const {
    double s = 0;
    const double norm = avgdl_ > 0 ? static_cast<double>(doc_len_.at(doc)) / avgdl_ : 0.0;
    for (const auto& term : unique_tokens(query)) {
        const auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const auto p = std::find_if(it->second.begin(), it->second.end(), [&](const Posting& x) { return x.doc == doc; });
        if (p == it->second.end()) continue;
        const double tf = static_cast<double>(p->tf);
        s += idf(term) * tf * (k1_ + 1) / (tf + k1_ * (1 - b_ + b_ * norm));
    }
    return s;
}

std::vector<Scored> Bm25Index::rank(std::string_view query, const std::vector<std::string>* candidates) const {
    std::vector<Scored> out;
    if (candidates) {
        for (const auto& id : *candidates) {
            const auto it = by_id_.find(id);
            if (it == by_id_.end()) throw std::invalid_argument("candidate not in corpus: " + id);
            out.push_back({id, score(query, it->second)});
        }
    } else {
        std::vector<double> acc(corpus_.size(), 0.0);
        std::vector<bool> hit(corpus_.size(), false);
        for (const auto& term : unique_tokens(query)) {
            const auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            const double w = idf(term);
            for (const auto& p : it->second) {
                const double tf = static_cast<double>(p.tf);
                const double norm = static_cast<double>(doc_len_[p.doc]) / avgdl_;
                acc[p.doc] += w * tf * (k1_ + 1) / (tf + k1_ * (1 - b_ + b_ * norm));
                hit[p.doc] = true;
            }
        }
        for (std::size_t d = 0; d < corpus_.size(); ++d) {
            if (hit[d] && acc[d] > 0) out.push_back({corpus_[d].id, acc[d]});
        }
    }
    sort_scored(out);
    return out;
}

const T2SExample& Bm25Index::example(const std::string& id) const {
    const auto it = by_id_.find(id);
    if (it == by_id_.end()) throw std::out_of_range("unknown example id: " + id);
    return corpus_[it->second];
}

void Bm25Index::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json j;
    j["format"] = "bm25";
    j["version"] = format_version;
    j["k1"] = k1_;
    j["b"] = b_;
    j["corpus_digest"] = digest_;
    j["corpus"] = nlohmann::ordered_json::array();
    for (const auto& e : corpus_) j["corpus"].push_back(to_json(e));
    write_file(path, j.dump() + "\n");
}

Bm25Index Bm25Index::load(const std::filesystem::path& path) {
    const auto j = nlohmann::json::parse(read_file(path));
    if (j.value("format", "") != "bm25" || j.value("version", 0) != format_version) {
        throw std::runtime_error(path.string() + ": not a version " + std::to_string(format_version) + " BM25 index");
    }
    std::vector<T2SExample> corpus;
    for (const auto& e : j.at("corpus")) corpus.push_back(t2s_example_from_json(e));
    Bm25Index index(std::move(corpus), j.at("k1").get<double>(), j.at("b").get<double>());
    if (index.corpus_digest() != j.at("corpus_digest").get<std::string>()) {
        throw std::runtime_error(path.string() + ": corpus digest mismatch");
    }
    return index;
}

// ---------------------------------------------------------------------------

HashingVectorIndex::HashingVectorIndex(std::vector<T2SExample> corpus, std::size_t dimensions)
    : corpus_(std::move(corpus)), dims_(dimensions) {
    if (corpus_.empty()) throw std::invalid_argument("vector corpus must not be empty");
    if (dims_ == 0) throw std::invalid_argument("dimensions must be positive");
    by_id_ = index_ids(corpus_);
    for (const auto& e : corpus_) vectors_.push_back(embed(e.question + " " + e.sql));
}

std::vector<float> HashingVectorIndex::embed(std::string_view text) const {
    std::vector<float> v(dims_, 0.0f);
    auto add = [&](const std::string& feature, float weight) {
        const auto h = fnv1a64(feature);
        v[h % dims_] += (h >> 63) ? -weight : weight;
    };
    for (const auto& tok : tokenize_words(text)) {
        add("w:" + tok, 1.0f);
        const auto padded = "#" + tok + "#";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) add("c:" + padded.substr(i, 3), 0.5f);
    }
    double norm = 0;
    for (const float x : v) norm += static_cast<double>(x) * x;
    if (norm > 0) {
        const auto inv = static_cast<float>(1.0 / std::sqrt(norm));
        for (auto& x : v) x *= inv;
    }
    return v;
}

std::vector<Scored> HashingVectorIndex::rank(std::string_view query, const std::vector<std::string>* candidates) const {
    const auto q = embed(query);
    auto cosine = [&](std::size_t d) {
        double s = 0;
        for (std::size_t i = 0; i < dims_; ++i) s += static_cast<double>(q[i]) * vectors_[d][i];
        return s;
    };
    std::vector<Scored> out;
    if (candidates) {
        for (const auto& id : *candidates) {
            const auto it = by_id_.find(id);
            if (it == by_id_.end()) throw std::invalid_argument("candidate not in corpus: " + id);
            out.push_back({id, cosine(it->second)});
        }
    } else {
        for (std::size_t d = 0; d < corpus_.size(); ++d) {
            const auto s = cosine(d);
            if (s > 1e-12) out.push_back({corpus_[d].id, s});
        }
    }
    sort_scored(out);
    return out;
}

const T2SExample& HashingVectorIndex::example(const std::string& id) const {
    const auto it = by_id_.find(id);
    if (it == by_id_.end()) throw std::out_of_range("unknown example id: " + id);
    return corpus_[it->second];
}

std::vector<std::string> retrieve_per_pair(const Retriever& retriever,
                                           const std::vector<std::pair<std::string, std::string>>& pairs) {
    auto sorted = pairs;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& [a, b] : sorted) {
        const auto ranked = retriever.rank(a == b ? a : a + " " + b);
        if (ranked.empty()) continue;
        if (seen.insert(ranked.front().id).second) out.push_back(ranked.front().id);
    }
    return out;
}

std::vector<std::string> select_topk(const Retriever& retriever, std::string_view question,
                                     const std::vector<std::string>& candidates, std::size_t k) {
    std::vector<std::string> out;
    for (const auto& s : retriever.rank(question, &candidates)) {
        if (out.size() == k) break;
        out.push_back(s.id);
    }
    return out;
}

// ---------------------------------------------------------------------------

void ValueIndexConfig::validate() const {
    if (bands == 0 || rows == 0 || bands * rows != permutations) {
        throw std::invalid_argument("bands * rows must equal permutations");
    }
    if (threshold < 0 || threshold > 1) throw std::invalid_argument("threshold must be in [0, 1]");
}

std::set<std::string> shingles(std::string_view text) {
    const auto s = to_lower(text);
    std::set<std::string> out;
    if (s.empty()) return out;
    if (s.size() < 3) {
        out.insert(s);
        return out;
    }
    for (std::size_t i = 0; i + 3 <= s.size(); ++i) out.insert(s.substr(i, 3));
    return out;
}

double exact_jaccard(std::string_view a, std::string_view b) {
    const auto sa = shingles(a);
    const auto sb = shingles(b);
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& x : sa) inter += sb.count(x);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

ValueIndex::ValueIndex(std::vector<Entry> entries, const ValueIndexConfig& config)
    : entries_(std::move(entries)), config_(config) {
    config_.validate();
    std::uint64_t state = config_.seed;
    for (std::size_t i = 0; i < config_.permutations; ++i) {
        const auto a = splitmix64(state) % (mersenne61 - 1) + 1;
        const auto b = splitmix64(state) % mersenne61;
        hash_params_.emplace_back(a, b);
    }
    buckets_.resize(config_.bands);
    for (std::size_t e = 0; e < entries_.size(); ++e) {
        signatures_.push_back(signature(entries_[e].value));
        for (std::size_t band = 0; band < config_.bands; ++band) {
            buckets_[band][band_key(signatures_.back(), band * config_.rows, config_.rows)].push_back(e);
        }
    }
}

ValueIndex ValueIndex::build(const std::filesystem::path& db_path, const DatabaseSchema& schema,
                             const ValueIndexConfig& config) {
    Database db(db_path, OpenMode::read_only);
    std::vector<Entry> entries;
    for (const auto& table : schema.tables) {
        for (const auto& col : table.columns) {
            const auto c = quote_identifier(col.name);
            auto stmt = db.prepare("SELECT DISTINCT " + c + " FROM " + quote_identifier(table.name) + " WHERE typeof(" +
                                   c + ") = 'text' AND length(" + c + ") BETWEEN 1 AND " +
                                   std::to_string(config.max_value_chars) + " ORDER BY 1");
            while (stmt.step()) entries.push_back({table.name, col.name, stmt.column_text(0)});
        }
    }
    return ValueIndex(std::move(entries), config);
}

std::vector<std::uint64_t> ValueIndex::signature(std::string_view text) const {
    std::vector<std::uint64_t> sig(config_.permutations, std::numeric_limits<std::uint64_t>::max());
    for (const auto& sh : shingles(text)) {
        const auto x = fnv1a64(sh) % mersenne61;
        for (std::size_t i = 0; i < sig.size(); ++i) {
            auto h = mulmod61(hash_params_[i].first, x) + hash_params_[i].second;
            if (h >= mersenne61) h -= mersenne61;
            sig[i] = std::min(sig[i], h);
        }
    }
    return sig;
}

double ValueIndex::estimate(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("signature sizes differ");
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(a.size());
}

std::vector<EntityHit> ValueIndex::match(const std::vector<std::string>& keywords) const {
    std::map<std::size_t, double> best;
    for (const auto& k : keywords) {
        if (shingles(k).empty()) continue;
        const auto sig = signature(k);
        std::set<std::size_t> candidates;
        for (std::size_t band = 0; band < config_.bands; ++band) {
            const auto it = buckets_[band].find(band_key(sig, band * config_.rows, config_.rows));
            if (it != buckets_[band].end()) candidates.insert(it->second.begin(), it->second.end());
        }
        for (const auto e : candidates) {
            const auto s = estimate(sig, signatures_[e]);
            if (s < config_.threshold) continue;
            auto& slot = best[e];
            slot = std::max(slot, s);
        }
    }
    std::vector<EntityHit> out;
    for (const auto& [e, s] : best) out.push_back({entries_[e].table, entries_[e].column, entries_[e].value, s});
    std::sort(out.begin(), out.end(), [](const EntityHit& a, const EntityHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.table, a.column, a.value) < std::tie(b.table, b.column, b.value);
    });
    return out;
}

void ValueIndex::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json j;
    j["format"] = "value_index";
    j["version"] = 1;
    j["config"] = {{"permutations", config_.permutations}, {"bands", config_.bands},
                   {"rows", config_.rows},                 {"threshold", config_.threshold},
                   {"seed", config_.seed},                 {"max_value_chars", config_.max_value_chars}};
    std::string blob;
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries_) {
        j["entries"].push_back({e.table, e.column, e.value});
        blob += e.table + "\x1f" + e.column + "\x1f" + e.value + "\x1e";
    }
    j["digest"] = sha256_hex(blob);
    write_file(path, j.dump() + "\n");
}

ValueIndex ValueIndex::load(const std::filesystem::path& path) {
    const auto j = nlohmann::json::parse(read_file(path));
    if (j.value("format", "") != "value_index" || j.value("version", 0) != 1) {
        throw std::runtime_error(path.string() + ": not a version 1 value index");
    }
    ValueIndexConfig c;
    const auto& jc = j.at("config");
    c.permutations = jc.at("permutations");
    c.bands = jc.at("bands");
    c.rows = jc.at("rows");
    c.threshold = jc.at("threshold");
    c.seed = jc.at("seed");
    c.max_value_chars = jc.at("max_value_chars");
    std::vector<Entry> entries;
    std::string blob;
    for (const auto& e : j.at("entries")) {
        entries.push_back({e.at(0), e.at(1), e.at(2)});
        blob += entries.back().table + "\x1f" + entries.back().column + "\x1f" + entries.back().value + "\x1e";
    }
    if (sha256_hex(blob) != j.at("digest").get<std::string>()) throw std::runtime_error(path.string() + ": digest mismatch");
    return ValueIndex(std::move(entries), c);
}

// ---------------------------------------------------------------------------

std::string question_and_hint(std::string_view question, std::string_view hint) {
    auto out = trim(question);
    if (!trim(hint).empty()) out += "\nHint: " + trim(hint);
    return out;
}

std::vector<std::string> filter_columns_llm(const DatabaseSchema& schema, std::string_view table_name,
                                            std::string_view question_and_hint_text,
                                            const std::vector<T2SExample>& examples, LlmGateway& gateway,
                                            std::vector<Diagnostic>& diagnostics) {
    const auto& table = schema.table(table_name);
    SubSchema whole;
    whole.id = table.name;
    whole.parent_tables.tables = {table.name};
    std::vector<std::string> names;
    for (const auto& c : table.columns) names.push_back(c.name);
    whole.per_table_columns = {{table.name, names}};

    std::string ex_text;
    for (const auto& e : examples) ex_text += "Question: " + e.question + "\nSQL: " + e.sql + "\n";
    ex_text = ex_text.empty() ? "Examples: none for this table." : "Examples:\n" + ex_text;

    LlmRequest r;
    r.template_id = std::string(templates::column_filter);
    r.rendered_prompt = render_prompt(templates::column_filter,
                                      {{"TABLE_SCHEMA", "Table schema:\n" + render_subschema_text(schema, whole)},
                                       {"EXAMPLES", ex_text},
                                       {"QUESTION_AND_HINT", std::string(question_and_hint_text)}});
    r.purpose = Purpose::column_filter;
    r.temperature = default_temperature(Purpose::column_filter);

    nlohmann::json parsed;
    try {
        parsed = parse_json_object(gateway.complete(r).text, {"reasoning", "selected_columns"}, {"selected_columns"});
    } catch (const std::exception& e) {
        diagnostics.push_back({"column_filter", table.name, std::string("empty selection: ") + e.what()});
        return {};
    }
    std::set<std::string> chosen;
    for (const auto& name : parsed.at("selected_columns").get<std::vector<std::string>>()) {
        const auto* col = table.find_column(trim(name));
        if (!col) {
            diagnostics.push_back({"column_filter", table.name, "dropped unknown column " + name});
            continue;
        }
        chosen.insert(col->name);
    }
    std::vector<std::string> out;
    for (const auto& c : table.columns) {
        if (chosen.count(c.name)) out.push_back(c.name);
    }
    return out;
}

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::connection: return "connection";
        case Provenance::retrieval: return "retrieval";
        case Provenance::entity: return "entity";
        case Provenance::llm: return "llm";
    }
    return "unknown";
}

namespace {

Provenance provenance_from_string(std::string_view s) {
    for (const auto p : {Provenance::connection, Provenance::retrieval, Provenance::entity, Provenance::llm}) {
        if (s == to_string(p)) return p;
    }
    throw std::invalid_argument("unknown provenance: " + std::string(s));
}

}  // namespace

std::set<ColumnRef> FilteredSchema::columns() const {
    std::set<ColumnRef> out;
    for (const auto& [t, cols] : tables) {
        for (const auto& c : cols) out.insert({t, c.name});
    }
    return out;
}

std::set<std::string> FilteredSchema::table_names() const {
    std::set<std::string> out;
    for (const auto& [t, _] : tables) out.insert(t);
    return out;
}

bool FilteredSchema::contains(const ColumnRef& c) const {
    for (const auto& [t, cols] : tables) {
        if (!iequals(t, c.table)) continue;
        for (const auto& fc : cols) {
            if (iequals(fc.name, c.column)) return true;
        }
    }
    return false;
}

FilteredSchema assemble_filtered_schema(const DatabaseSchema& schema,
                                        const std::map<std::string, std::vector<std::string>>& llm_selections,
                                        const std::vector<EntityHit>& entity_hits,
                                        const std::set<ColumnRef>& retrieval_columns) {
    std::map<ColumnRef, std::set<Provenance>> marks;
    auto mark = [&](std::string_view table, std::string_view column, Provenance p) {
        const auto ref = schema.resolve(table, column);
        if (!ref) throw SchemaError("unknown column " + std::string(table) + "." + std::string(column));
        marks[*ref].insert(p);
    };
    for (const auto& t : schema.tables) {
        for (const auto& c : connection_columns(schema, t.name)) mark(t.name, c, Provenance::connection);
    }
    for (const auto& [table, cols] : llm_selections) {
        for (const auto& c : cols) mark(table, c, Provenance::llm);
    }
    for (const auto& h : entity_hits) mark(h.table, h.column, Provenance::entity);
    for (const auto& c : retrieval_columns) mark(c.table, c.column, Provenance::retrieval);

    FilteredSchema fs;
    for (const auto& t : schema.tables) {
        std::vector<FilteredColumn> cols;
        for (const auto& c : t.columns) {
            const auto it = marks.find({t.name, c.name});
            if (it != marks.end()) cols.push_back({c.name, it->second});
        }
        fs.tables.emplace_back(t.name, std::move(cols));
    }
    return fs;
}

nlohmann::ordered_json to_json(const FilteredSchema& fs) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& [t, cols] : fs.tables) {
        nlohmann::ordered_json jt;
        jt["table"] = t;
        jt["columns"] = nlohmann::ordered_json::array();
        for (const auto& c : cols) {
            nlohmann::ordered_json jc;
            jc["name"] = c.name;
            jc["provenance"] = nlohmann::ordered_json::array();
            for (const auto p : c.provenance) jc["provenance"].push_back(to_string(p));
            jt["columns"].push_back(jc);
        }
        j.push_back(jt);
    }
    return j;
}

FilteredSchema filtered_schema_from_json(const nlohmann::json& j) {
    FilteredSchema fs;
    for (const auto& jt : j) {
        std::vector<FilteredColumn> cols;
        for (const auto& jc : jt.at("columns")) {
            FilteredColumn c{jc.at("name").get<std::string>(), {}};
            for (const auto& p : jc.at("provenance")) c.provenance.insert(provenance_from_string(p.get<std::string>()));
            cols.push_back(std::move(c));
        }
        fs.tables.emplace_back(jt.at("table").get<std::string>(), std::move(cols));
    }
    return fs;
}

std::string render_filtered_schema(const DatabaseSchema& schema, const FilteredSchema& fs) {
    SubSchema ss;
    for (const auto& [t, cols] : fs.tables) {
        std::vector<std::string> names;
        for (const auto& c : cols) names.push_back(c.name);
        ss.per_table_columns.emplace_back(t, std::move(names));
        ss.parent_tables.tables.push_back(t);
    }
    return render_subschema_text(schema, ss);
}

// ---------------------------------------------------------------------------

LinkingMode linking_mode_from_string(std::string_view s) {
    for (const auto& name : linking_mode_names()) {
        if (name != s) continue;
        LinkingMode m;
        m.retriever = s.starts_with("vec") ? RetrieverKind::vec : RetrieverKind::bm25;
        m.all = s.ends_with("-all");
        m.llm = s.ends_with("+llm");
        return m;
    }
    throw std::invalid_argument("unknown linking mode: " + std::string(s));
}

std::string to_string(const LinkingMode& m) {
    if (m.all && m.llm) throw std::invalid_argument("the LLM filter works on the top-k examples only");
    std::string s = m.retriever == RetrieverKind::vec ? "vec" : "bm25";
    s += m.all ? "-all" : "-top6";
    if (m.llm) s += "+llm";
    return s;
}

std::vector<std::string> linking_mode_names() {
    return {"bm25-top6", "bm25-all", "bm25-top6+llm", "vec-top6", "vec-all", "vec-top6+llm"};
}

LinkingResult link_question(const LinkingContext& ctx, std::string_view question, std::string_view hint) {
    if (ctx.mode.llm && !ctx.gateway) throw std::invalid_argument("LLM linking modes need a gateway");
    LinkingResult r;
    r.keywords = extract_keywords(question, hint, ctx.gateway, &r.diagnostics);
    r.retrieved_ids = retrieve_per_pair(ctx.retriever, r.keywords.pairs);
    r.context_ids = ctx.mode.all ? r.retrieved_ids : select_topk(ctx.retriever, question, r.retrieved_ids, ctx.top_k);
    if (ctx.values) r.entities = ctx.values->match(r.keywords.keywords);

    std::vector<std::pair<const T2SExample*, ParsedQuery>> context;
    for (const auto& id : r.context_ids) {
        const auto& e = ctx.retriever.example(id);
        try {
            context.emplace_back(&e, extract_schema_elements(e.sql, ctx.schema));
        } catch (const std::exception& ex) {
            r.diagnostics.push_back({"linking", e.subschema_id, "unparseable example " + id + ": " + ex.what()});
        }
    }

    std::map<std::string, std::vector<std::string>> selections;
    std::set<ColumnRef> retrieval_columns;
    if (ctx.mode.llm) {
        const auto qh = question_and_hint(question, hint);
        std::vector<std::future<std::pair<std::vector<std::string>, std::vector<Diagnostic>>>> futures;
        for (const auto& t : ctx.schema.tables) {
            std::vector<T2SExample> examples;
            for (const auto& [e, parsed] : context) {
                if (parsed.referenced_tables.count(t.name)) examples.push_back(*e);
            }
            futures.push_back(std::async(std::launch::async, [&ctx, &qh, name = t.name, ex = std::move(examples)] {
                std::vector<Diagnostic> d;
                auto cols = filter_columns_llm(ctx.schema, name, qh, ex, *ctx.gateway, d);
                return std::make_pair(std::move(cols), std::move(d));
            }));
        }
        for (std::size_t i = 0; i < futures.size(); ++i) {
            auto [cols, d] = futures[i].get();
            selections[ctx.schema.tables[i].name] = std::move(cols);
            r.diagnostics.insert(r.diagnostics.end(), d.begin(), d.end());
        }
    } else {
        for (const auto& [e, parsed] : context) retrieval_columns.insert(parsed.referenced.begin(), parsed.referenced.end());
    }
    r.filtered = assemble_filtered_schema(ctx.schema, selections, r.entities, retrieval_columns);
    return r;
}

}  // namespace sqlsynth
