// fdm: command-line front end. Subcommands mirror the file-level stages in
// fdm/pipeline.hpp; every run that writes files also writes a manifest.

#include "fdm/fdm.hpp"
#include "fdm/manifest.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

using namespace fdm;

struct Common {
    std::string config_file;
    std::size_t threads = 1;
    bool sequential = false;

    std::size_t workers() const { return sequential ? 1 : std::max<std::size_t>(1, threads); }
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_file, "flat key=value file; command-line flags take precedence");
    sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--sequential", c.sequential, "single-threaded, bit-reproducible");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool truthy(const std::string& v) { return v == "true" || v == "1" || v == "yes" || v == "on"; }

/// Append `--key value` for every config-file entry whose flag is absent
/// from the command line. Returns arguments in CLI11's reversed order.
std::vector<std::string> expand_config(int argc, char** argv, CLI::App& app) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string file;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
    }
    if (!file.empty() && !args.empty()) {
        CLI::App* sub = nullptr;
        try {
            sub = app.get_subcommand(args[0]);
        } catch (const CLI::OptionNotFound&) {
            throw UsageError("--config needs a subcommand first");
        }
        std::ifstream in(file);
        if (!in) throw IoError("cannot open config file: " + file);
        std::string line;
        std::size_t lineno = 0;
        std::vector<std::string> extra;
        while (std::getline(in, line)) {
            ++lineno;
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError(file + ":" + std::to_string(lineno) + ": expected key=value");
            const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
            const std::string flag = "--" + key;
            const CLI::Option* opt = sub->get_option_no_throw(flag);
            if (!opt || key == "config" || key == "help")
                throw UsageError(file + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
            const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
                return a == flag || a.rfind(flag + "=", 0) == 0;
            });
            if (given) continue;
            if (opt->get_expected_min() == 0) {
                if (truthy(value)) extra.push_back(flag);
            } else {
                extra.push_back(flag);
                extra.push_back(value);
            }
        }
        args.insert(args.end(), extra.begin(), extra.end());
    }
    std::reverse(args.begin(), args.end());
    return args;
}

std::map<std::string, std::string> resolved_config(const CLI::App* sub) {
    std::map<std::string, std::string> cfg;
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string name = opt->get_lnames().front();
        if (name == "help" || name == "config") continue;
        std::string value;
        if (opt->get_expected_min() == 0) {
            value = opt->count() > 0 ? "true" : "false";
        } else if (opt->count() > 0) {
            const auto& r = opt->results();
            for (std::size_t i = 0; i < r.size(); ++i) value += (i ? "," : "") + r[i];
        } else {
            value = opt->get_default_str();
        }
        cfg[name] = value;
    }
    return cfg;
}

class ManifestWriter {
  public:
    explicit ManifestWriter(const CLI::App* sub)
        : start_(std::chrono::steady_clock::now()) {
        m_.subcommand = sub->get_name();
        m_.config = resolved_config(sub);
        m_.started_at = utc_timestamp(std::chrono::system_clock::now());
    }
    RunManifest& manifest() { return m_; }

    void write(const std::string& path, const Paths& outputs) {
        for (const auto& p : outputs) m_.add_output(p);
        m_.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        save_manifest(path, m_);
    }

  private:
    RunManifest m_;
    std::chrono::steady_clock::time_point start_;
};

std::string sidecar(const std::string& out) { return out + ".manifest.json"; }

std::string dir_manifest(const std::string& dir) {
    return (std::filesystem::path(dir) / "manifest.json").string();
}

void add_train_options(CLI::App* sub, TrainConfig& c) {
    sub->add_option("--topics", c.topics, "number of topics T")->check(CLI::PositiveNumber);
    sub->add_option("--batch", c.batch, "pairs per step B")->check(CLI::PositiveNumber);
    sub->add_option("--lr", c.lr, "Adam learning rate");
    sub->add_option("--max-steps", c.max_steps, "step budget");
    sub->add_option("--check-every", c.check_every, "steps between convergence checks");
    sub->add_option("--conv-window", c.conv_window, "consecutive quiet checks to stop");
    sub->add_option("--conv-tol", c.conv_tol, "relative EMA change counted as quiet");
    sub->add_option("--ema-decay", c.ema_decay, "EMA decay of the per-pair objective");
    sub->add_option("--init-scale", c.init_scale, "std of initial logits");
    sub->add_option("--checkpoint-every", c.checkpoint_every, "steps between checkpoints (0: end only)");
}

void add_preprocess_options(CLI::App* sub, PreprocessStage& p) {
    sub->add_option("--min-count", p.build.min_token_count, "drop tokens rarer than this");
    sub->add_option("--min-doc-len", p.build.min_doc_len, "drop documents shorter than this (>= 2)");
    sub->add_option("--min-len", p.text.min_token_length, "minimum token length in characters");
    sub->add_option("--stopwords", p.stopwords_file, "stopword file, one word per line");
    sub->add_flag("--stem", p.text.stem, "Porter stemming");
    sub->add_option("--drop-top-k", p.build.drop_top_k, "remove the k most frequent tokens");
}

int run(int argc, char** argv) {
    CLI::App app{"fdm: topic models fitted to token co-occurrence statistics"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    Common common;

    // preprocess
    PreprocessStage pre;
    auto* s_pre = app.add_subcommand("preprocess", "raw text (one document per line) -> corpus file");
    s_pre->add_option("--input", pre.input, "text file")->required();
    s_pre->add_option("--out", pre.out, "corpus file")->required();
    s_pre->add_option("--test-out", pre.test_out, "holdout corpus file");
    s_pre->add_option("--holdout-frac", pre.holdout_frac, "fraction of documents held out");
    s_pre->add_option("--seed", pre.seed, "root seed");
    add_preprocess_options(s_pre, pre);
    add_common(s_pre, common);

    // cooc
    CoocStage cs;
    auto* s_cooc = app.add_subcommand("cooc", "corpus file -> co-occurrence matrix");
    s_cooc->add_option("--corpus", cs.corpus, "corpus file")->required();
    s_cooc->add_option("--out", cs.out, "binary matrix file")->required();
    s_cooc->add_option("--text-out", cs.text_out, "optional 'u v w' text export");
    add_common(s_cooc, common);

    // train
    TrainStage ts;
    auto* s_train = app.add_subcommand("train", "fit topics to a co-occurrence matrix");
    s_train->add_option("--cooc", ts.cooc, "binary matrix file")->required();
    s_train->add_option("--out", ts.out_dir, "output directory")->required();
    s_train->add_option("--seed", ts.config.seed, "root seed");
    s_train->add_option("--init", ts.init_checkpoint, "resume from this checkpoint");
    s_train->add_option("--corpus", ts.vocab_corpus, "corpus file for token names in top_tokens.txt");
    s_train->add_option("--top-k", ts.top_k, "tokens per topic in top_tokens.txt");
    add_train_options(s_train, ts.config);
    add_common(s_train, common);

    // eval-ll
    EvalStage es;
    std::string eval_manifest;
    auto* s_eval = app.add_subcommand("eval-ll", "holdout log-likelihood by KL projection");
    s_eval->add_option("--topics", es.topics, "topics file")->required();
    s_eval->add_option("--corpus", es.corpus, "test corpus file")->required();
    s_eval->add_option("--smoothing", es.options.smoothing, "uniform mass mixed into every topic");
    s_eval->add_option("--max-iter", es.options.projection.max_iter, "projection iterations per document");
    s_eval->add_option("--tol", es.options.projection.tol, "projection stopping tolerance");
    s_eval->add_option("--out", es.out, "per-document CSV");
    s_eval->add_option("--manifest", eval_manifest, "manifest path when --out is not given");
    add_common(s_eval, common);

    // match
    std::string ref, learned, match_out, match_manifest;
    auto* s_match = app.add_subcommand("match", "optimal-matching l1 error between topic sets");
    s_match->add_option("--ref", ref, "reference topics file")->required();
    s_match->add_option("--learned", learned, "learned topics file")->required();
    s_match->add_option("--out", match_out, "write the report here instead of stdout");
    s_match->add_option("--manifest", match_manifest, "manifest path when --out is not given");
    add_common(s_match, common);

    // anchors
    std::string anchor_topics, anchor_out, anchor_manifest;
    double eps = 1e-4, pmin = 1e-3;
    auto* s_anchor = app.add_subcommand("anchors", "list eps-anchor tokens per topic");
    s_anchor->add_option("--topics", anchor_topics, "topics file")->required();
    s_anchor->add_option("--eps", eps, "maximum mass in every other topic");
    s_anchor->add_option("--pmin", pmin, "minimum mass in the anchored topic");
    s_anchor->add_option("--out", anchor_out, "write the report here instead of stdout");
    s_anchor->add_option("--manifest", anchor_manifest, "manifest path when --out is not given");
    add_common(s_anchor, common);

    // gen
    GenStage gs;
    std::string gen_topics, gen_intervals, gen_prior = "sym:1";
    std::size_t gen_vocab = 0;
    auto* s_gen = app.add_subcommand("gen", "sample a synthetic corpus from ground-truth topics");
    auto* o_topics = s_gen->add_option("--topics", gen_topics, "ground-truth topics file");
    auto* o_iv = s_gen->add_option("--intervals", gen_intervals, "uniform interval topics, e.g. 1-40,30-70");
    o_topics->excludes(o_iv);
    s_gen->add_option("--vocab", gen_vocab, "vocabulary size for --intervals (default: largest bound)");
    s_gen->add_option("--prior", gen_prior, "sym:C or vec:a,b,...");
    s_gen->add_option("--docs", gs.truth.docs, "number of documents");
    s_gen->add_option("--doc-len", gs.truth.tokens_per_doc, "tokens per document");
    s_gen->add_option("--seed", gs.truth.seed, "root seed");
    s_gen->add_option("--out", gs.out, "corpus file")->required();
    s_gen->add_option("--text-out", gs.text_out, "also write documents as text lines");
    s_gen->add_option("--topics-out", gs.topics_out, "also write the ground-truth topics");
    add_common(s_gen, common);

    // pipeline
    PipelineStage ps;
    ps.preprocess.holdout_frac = 0.1;
    std::string pipe_ref;
    auto* s_pipe = app.add_subcommand("pipeline", "preprocess, cooc, train and eval-ll in one run");
    s_pipe->add_option("--input", ps.input, "text file")->required();
    s_pipe->add_option("--out", ps.out_dir, "output directory")->required();
    s_pipe->add_option("--seed", ps.train.seed, "root seed");
    s_pipe->add_option("--holdout-frac", ps.preprocess.holdout_frac, "fraction held out (0: no evaluation)");
    s_pipe->add_option("--smoothing", ps.eval.smoothing, "uniform mass mixed into every topic");
    s_pipe->add_option("--top-k", ps.top_k, "tokens per topic in top_tokens.txt");
    s_pipe->add_option("--ref", pipe_ref, "reference topics to match against");
    add_preprocess_options(s_pipe, ps.preprocess);
    add_train_options(s_pipe, ps.train);
    add_common(s_pipe, common);

    try {
        auto args = expand_config(argc, argv, app);
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        std::cout << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: UsageError: " << e.what() << '\n';
        std::cout << app.help();
        return 1;
    }

    const std::size_t workers = common.workers();
    CLI::App* sub = app.get_subcommands().front();
    ManifestWriter mw(sub);
    auto& man = mw.manifest();

    if (sub == s_pre) {
        pre.build.threads = workers;
        man.seed = pre.seed;
        man.inputs = {pre.input};
        if (!pre.stopwords_file.empty()) man.inputs.push_back(pre.stopwords_file);
        mw.write(sidecar(pre.out), run_preprocess(pre));
    } else if (sub == s_cooc) {
        cs.threads = workers;
        man.inputs = {cs.corpus};
        mw.write(sidecar(cs.out), run_cooc(cs));
    } else if (sub == s_train) {
        ts.config.threads = workers;
        man.seed = ts.config.seed;
        man.inputs = {ts.cooc};
        if (!ts.init_checkpoint.empty()) man.inputs.push_back(ts.init_checkpoint);
        if (!ts.vocab_corpus.empty()) man.inputs.push_back(ts.vocab_corpus);
        const auto r = run_train(ts);
        std::cout << "steps " << r.steps << '\n' << "converged " << (r.trace.converged ? "true" : "false") << '\n';
        mw.write(dir_manifest(ts.out_dir), r.written);
    } else if (sub == s_eval) {
        es.options.threads = workers;
        man.inputs = {es.topics, es.corpus};
        const auto [report, written] = run_eval(es);
        if (es.out.empty()) write_loglik_csv(std::cout, report);
        else write_eval_summary(std::cout, report);
        if (!es.out.empty()) mw.write(sidecar(es.out), written);
        else if (!eval_manifest.empty()) mw.write(eval_manifest, written);
    } else if (sub == s_match) {
        man.inputs = {ref, learned};
        const auto r = run_match(ref, learned);
        if (match_out.empty()) {
            write_match(std::cout, r);
            if (!match_manifest.empty()) mw.write(match_manifest, {});
        } else {
            {
                std::ofstream out(match_out);
                if (!out) throw IoError("cannot open for writing: " + match_out);
                write_match(out, r);
            }
            mw.write(sidecar(match_out), {match_out});
        }
    } else if (sub == s_anchor) {
        man.inputs = {anchor_topics};
        const auto a = anchor_check(TopicSet(load_prob_matrix(anchor_topics), 1e-6), eps, pmin);
        if (anchor_out.empty()) {
            write_anchors(std::cout, a);
            if (!anchor_manifest.empty()) mw.write(anchor_manifest, {});
        } else {
            {
                std::ofstream out(anchor_out);
                if (!out) throw IoError("cannot open for writing: " + anchor_out);
                write_anchors(out, a);
            }
            mw.write(sidecar(anchor_out), {anchor_out});
        }
    } else if (sub == s_gen) {
        if (gen_topics.empty() == gen_intervals.empty())
            throw UsageError("gen: give exactly one of --topics or --intervals");
        if (!gen_topics.empty()) {
            gs.truth.topics = TopicSet(load_prob_matrix(gen_topics), 1e-6);
            man.inputs = {gen_topics};
        } else {
            const auto iv = parse_intervals(gen_intervals);
            std::size_t n = gen_vocab;
            if (n == 0)
                for (const auto& [lo, hi] : iv) n = std::max(n, hi);
            gs.truth.topics = interval_topics(n, iv);
        }
        gs.truth.prior = parse_prior(gen_prior);
        gs.threads = workers;
        man.seed = gs.truth.seed;
        mw.write(sidecar(gs.out), run_gen(gs));
    } else if (sub == s_pipe) {
        ps.threads = workers;
        ps.train.threads = workers;
        ps.preprocess.build.threads = workers;
        ps.preprocess.seed = ps.train.seed;
        ps.eval.threads = workers;
        man.seed = ps.train.seed;
        man.inputs = {ps.input};
        auto r = run_pipeline(ps);
        if (!pipe_ref.empty()) {
            man.inputs.push_back(pipe_ref);
            const std::string path = (std::filesystem::path(ps.out_dir) / "match.txt").string();
            std::ofstream out(path);
            if (!out) throw IoError("cannot open for writing: " + path);
            write_match(out, run_match(pipe_ref, (std::filesystem::path(ps.out_dir) / "topics.txt").string()));
            out.close();
            r.written.push_back(path);
        }
        if (r.eval) write_eval_summary(std::cout, *r.eval);
        mw.write(dir_manifest(ps.out_dir), r.written);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const fdm::Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
        return fdm::exit_code(e.error_class());
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << '\n';
        return 2;
    }
}
