// Regenerates the synthetic fixtures under a directory (default tests/fixtures).
#include <filesystem>
#include <fstream>
#include <iostream>

#include "qslm/search.hpp"
#include "qslm/workbench/fixtures.hpp"

namespace {

// Two feasible non-baseline candidates separated by a large memory gap:
//   A: accuracy 0.89, 80% of baseline memory
//   B: accuracy 0.88, 20% of baseline memory
// Score = acc - alpha * ratio. At alpha 0, A wins (0.89 > 0.88); at alpha 1,
// B wins (0.68 > 0.09). The baseline itself misses the 900-byte budget.
qslm::SearchTrace alpha_trace() {
    using namespace qslm;
    SearchTrace t;
    t.task = TaskKind::Classification;
    t.ladder = {16, 8, 4};
    t.constraints = {0.02, 900.0};
    t.alpha = 0.5;
    const ScoreParams sp{t.alpha, 1000.0, 0.90};
    auto add = [&](Phase phase, std::optional<int> level, Assignment a, double perf, double mem) {
        Candidate c;
        c.index = t.candidates.size();
        c.phase = std::move(phase);
        c.level_index = level;
        c.assignment = std::move(a);
        c.stats = make_stats(perf, mem, t.constraints, sp, t.task);
        t.candidates.push_back(std::move(c));
    };
    add({PhaseKind::Init, {}, {}}, std::nullopt, Assignment::full_precision(), 0.90, 1000.0);
    add({PhaseKind::Global, {}, {}}, 0, Assignment::uniform(16), 0.89, 800.0);
    add({PhaseKind::Global, {}, {}}, 1, Assignment::uniform(8), 0.88, 200.0);
    add({PhaseKind::Global, {}, {}}, 2, Assignment::uniform(4), 0.70, 100.0);
    t.baseline = t.candidates[0].stats;
    t.markers.i_last = 1;
    t.markers.i_tmp = 1;
    t.best = Assignment::uniform(8);
    t.selected = select_final(t, sp);
    return t;
}

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

}  // namespace

int main(int argc, char** argv) {
    const std::filesystem::path dir = argc > 1 ? argv[1] : "tests/fixtures";
    std::filesystem::create_directories(dir);
    write(dir / "sentiment_train.tsv", qslm::format_classification_tsv(qslm::make_sentiment_examples(400, 11)));
    write(dir / "sentiment_test.tsv", qslm::format_classification_tsv(qslm::make_sentiment_examples(200, 12)));
    std::ofstream trace(dir / "alpha_trace.jsonl", std::ios::binary);
    qslm::write_trace(alpha_trace(), trace);
    std::cout << "fixtures written to " << dir << "\n";
}
