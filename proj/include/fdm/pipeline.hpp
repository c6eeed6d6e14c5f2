#pragma once

// File-level stages shared by the command-line tool. Each stage reads its
// inputs from disk, writes its outputs, and returns the paths it wrote.

#include "fdm/cooccurrence.hpp"
#include "fdm/corpus.hpp"
#include "fdm/evaluation.hpp"
#include "fdm/fdm_model.hpp"
#include "fdm/synthetic.hpp"
#include "fdm/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace fdm {

using Paths = std::vector<std::string>;

namespace detail {

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    return out;
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

} // namespace detail

// ---------------------------------------------------------------------------
// preprocess: raw text (one document per line) -> corpus file(s)

struct PreprocessStage {
    std::string input;
    std::string out;
    /// Written only when holdout_frac > 0.
    std::string test_out;
    std::string stopwords_file;
    PreprocessConfig text;
    CorpusBuildOptions build;
    double holdout_frac = 0.0;
    std::uint64_t seed = 0;
};

inline Paths run_preprocess(const PreprocessStage& s) {
    PreprocessConfig text = s.text;
    if (!s.stopwords_file.empty()) {
        std::ifstream sw(s.stopwords_file);
        if (!sw) throw IoError("cannot open: " + s.stopwords_file);
        text.stopwords = read_stopwords(sw);
    }
    std::ifstream in(s.input);
    if (!in) throw IoError("cannot open: " + s.input);
    const auto streams = read_token_streams(in, text);
    Corpus corpus = build_corpus(streams, s.build);

    Paths written;
    if (s.holdout_frac > 0.0) {
        if (s.test_out.empty()) throw InvalidArgument("preprocess: holdout fraction given without a test output");
        auto [train, test] = split_holdout(corpus, s.holdout_frac, s.seed);
        save_corpus(s.out, train);
        save_corpus(s.test_out, test);
        written = {s.out, s.test_out};
    } else {
        save_corpus(s.out, corpus);
        written = {s.out};
    }
    return written;
}

// ---------------------------------------------------------------------------
// cooc: corpus file -> binary co-occurrence matrix (+ optional text export)

struct CoocStage {
    std::string corpus;
    std::string out;
    std::string text_out;
    std::size_t threads = 1;
};

inline Paths run_cooc(const CoocStage& s) {
    const auto m = corpus_cooc(load_corpus(s.corpus), s.threads);
    save_cooc(s.out, m);
    Paths written{s.out};
    if (!s.text_out.empty()) {
        auto out = detail::open_out(s.text_out);
        write_cooc_text(out, m);
        written.push_back(s.text_out);
    }
    return written;
}

// ---------------------------------------------------------------------------
// train: co-occurrence matrix -> topics.txt, alpha.txt, trace.csv,
// top_tokens.txt, checkpoint.bin in an output directory

struct TrainStage {
    std::string cooc;
    std::string out_dir;
    TrainConfig config;
    /// Resume from this checkpoint instead of a fresh initialization.
    std::string init_checkpoint;
    /// Optional corpus file supplying token names for the top-k export.
    std::string vocab_corpus;
    std::size_t top_k = 10;
};

struct TrainStageResult {
    Paths written;
    TrainTrace trace;
    std::uint64_t steps = 0;
};

inline TrainStageResult run_train(const TrainStage& s) {
    const auto cooc = load_cooc(s.cooc);
    detail::ensure_dir(s.out_dir);
    TrainConfig cfg = s.config;
    if (cfg.checkpoint_every > 0 && cfg.checkpoint_path.empty())
        cfg.checkpoint_path = detail::join(s.out_dir, "checkpoint.bin");

    std::optional<Trainer> tr;
    if (s.init_checkpoint.empty())
        tr.emplace(cooc, cfg);
    else
        tr.emplace(Trainer::resume(cooc, cfg, s.init_checkpoint));
    tr->run();

    const FdmDist d = realize(tr->params());
    const std::string topics = detail::join(s.out_dir, "topics.txt");
    const std::string alpha = detail::join(s.out_dir, "alpha.txt");
    const std::string trace = detail::join(s.out_dir, "trace.csv");
    const std::string top = detail::join(s.out_dir, "top_tokens.txt");
    const std::string ckpt = detail::join(s.out_dir, "checkpoint.bin");
    save_prob_matrix(topics, d.mu);
    save_prob_matrix(alpha, d.alpha);
    {
        auto out = detail::open_out(trace);
        write_trace_csv(out, tr->trace());
    }
    {
        std::vector<std::string> names;
        if (!s.vocab_corpus.empty()) {
            const auto c = load_corpus(s.vocab_corpus);
            if (c.vocab_size() != cooc.n())
                throw VocabMismatch("train: vocabulary corpus has N=" + std::to_string(c.vocab_size()) +
                                    " but co-occurrence matrix has N=" + std::to_string(cooc.n()));
            names = c.vocab.tokens();
        }
        auto out = detail::open_out(top);
        write_top_tokens(out, d.mu, s.top_k, names);
    }
    tr->save_checkpoint(ckpt);
    return {{topics, alpha, trace, top, ckpt}, tr->trace(), tr->steps_done()};
}

// ---------------------------------------------------------------------------
// eval-ll: topics + corpus -> per-document log-likelihood CSV + summary

struct EvalStage {
    std::string topics;
    std::string corpus;
    std::string out;
    HoldoutOptions options;
};

inline void write_eval_summary(std::ostream& out, const EvalReport& r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", r.mean_loglik);
    out << "mean_loglik " << buf << '\n';
    out << "documents " << r.docs.size() << '\n';
    out << "excluded " << r.excluded << '\n';
    std::snprintf(buf, sizeof buf, "%.17g", r.smoothing);
    out << "smoothing " << buf << '\n';
}

inline std::pair<EvalReport, Paths> run_eval(const EvalStage& s) {
    const TopicSet topics(load_prob_matrix(s.topics), 1e-6);
    const auto report = holdout_loglik(load_corpus(s.corpus), topics, s.options);
    Paths written;
    if (!s.out.empty()) {
        auto out = detail::open_out(s.out);
        write_loglik_csv(out, report);
        written.push_back(s.out);
    }
    return {report, written};
}

// ---------------------------------------------------------------------------
// match and anchors

inline void write_match(std::ostream& out, const MatchResult& r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", r.err);
    out << "err " << buf << '\n';
    out << "reference_topic,learned_topic,l1\n";
    for (std::size_t t = 0; t < r.permutation.size(); ++t) {
        std::snprintf(buf, sizeof buf, "%.17g", r.distances[t]);
        out << t << ',' << r.permutation[t] << ',' << buf << '\n';
    }
}

inline MatchResult run_match(const std::string& ref, const std::string& learned) {
    return matching_error(TopicSet(load_prob_matrix(ref), 1e-6), TopicSet(load_prob_matrix(learned), 1e-6));
}

inline void write_anchors(std::ostream& out, const std::vector<std::vector<TokenId>>& anchors) {
    for (std::size_t t = 0; t < anchors.size(); ++t) {
        out << "topic " << t << ' ' << anchors[t].size() << ':';
        for (auto u : anchors[t]) out << ' ' << u;
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// gen: ground truth -> corpus file (+ optional raw text and truth topics)

struct GenStage {
    GroundTruth truth;
    std::string out;
    std::string text_out;
    std::string topics_out;
    std::size_t threads = 1;
};

inline Paths run_gen(const GenStage& s) {
    const auto c = gen_corpus(s.truth, s.threads);
    save_corpus(s.out, c);
    Paths written{s.out};
    if (!s.text_out.empty()) {
        auto out = detail::open_out(s.text_out);
        write_documents_text(out, c);
        written.push_back(s.text_out);
    }
    if (!s.topics_out.empty()) {
        save_prob_matrix(s.topics_out, s.truth.topics.matrix());
        written.push_back(s.topics_out);
    }
    return written;
}

/// "lo-hi,lo-hi,..." with 1-based inclusive bounds.
inline std::vector<std::pair<std::size_t, std::size_t>> parse_intervals(const std::string& spec) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        try {
            if (dash == std::string::npos) throw std::invalid_argument("dash");
            std::size_t p1 = 0, p2 = 0;
            const auto lo = std::stoull(item.substr(0, dash), &p1);
            const auto hi = std::stoull(item.substr(dash + 1), &p2);
            if (p1 != dash || p2 != item.size() - dash - 1) throw std::invalid_argument("trailing");
            out.emplace_back(lo, hi);
        } catch (const std::exception&) {
            throw UsageError("bad interval '" + item + "', expected LO-HI");
        }
    }
    if (out.empty()) throw UsageError("empty interval list");
    return out;
}

/// "sym:C" or "vec:a,b,c".
inline DocPrior parse_prior(const std::string& spec) {
    try {
        if (spec.rfind("sym:", 0) == 0) {
            std::size_t pos = 0;
            const double c = std::stod(spec.substr(4), &pos);
            if (pos != spec.size() - 4) throw std::invalid_argument("trailing");
            return SymmetricDirichlet{c};
        }
        if (spec.rfind("vec:", 0) == 0) {
            Dirichlet d;
            std::stringstream ss(spec.substr(4));
            std::string item;
            while (std::getline(ss, item, ',')) {
                std::size_t pos = 0;
                d.alpha.push_back(std::stod(item, &pos));
                if (pos != item.size()) throw std::invalid_argument("trailing");
            }
            if (d.alpha.empty()) throw std::invalid_argument("empty");
            return d;
        }
    } catch (const std::exception&) {
    }
    throw UsageError("bad prior '" + spec + "', expected sym:C or vec:a,b,...");
}

// ---------------------------------------------------------------------------
// pipeline: raw text -> corpus, cooc, trained topics, holdout evaluation

struct PipelineStage {
    std::string input;
    std::string out_dir;
    PreprocessStage preprocess;
    TrainConfig train;
    std::size_t top_k = 10;
    HoldoutOptions eval;
    std::size_t threads = 1;
};

struct PipelineResult {
    Paths written;
    std::optional<EvalReport> eval;
};

/// Same calls, arguments and seeds as running preprocess, cooc, train and
/// eval-ll one after another with the file names used here.
inline PipelineResult run_pipeline(const PipelineStage& s) {
    detail::ensure_dir(s.out_dir);
    PipelineResult r;
    auto add = [&](const Paths& p) { r.written.insert(r.written.end(), p.begin(), p.end()); };

    PreprocessStage pre = s.preprocess;
    pre.input = s.input;
    pre.out = detail::join(s.out_dir, "corpus.txt");
    pre.test_out = pre.holdout_frac > 0.0 ? detail::join(s.out_dir, "test.txt") : "";
    add(run_preprocess(pre));

    CoocStage cs{pre.out, detail::join(s.out_dir, "cooc.bin"), "", s.threads};
    add(run_cooc(cs));

    TrainStage ts;
    ts.cooc = cs.out;
    ts.out_dir = s.out_dir;
    ts.config = s.train;
    ts.vocab_corpus = pre.out;
    ts.top_k = s.top_k;
    add(run_train(ts).written);

    if (!pre.test_out.empty()) {
        EvalStage es{detail::join(s.out_dir, "topics.txt"), pre.test_out, detail::join(s.out_dir, "loglik.csv"),
                     s.eval};
        auto [report, paths] = run_eval(es);
        add(paths);
        const std::string summary = detail::join(s.out_dir, "eval.txt");
        auto out = detail::open_out(summary);
        write_eval_summary(out, report);
        out.close();
        r.written.push_back(summary);
        r.eval = std::move(report);
    }
    return r;
}

} // namespace fdm
