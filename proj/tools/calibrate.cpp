// Scratch calibration harness (not installed): trains the default config on
#include <map>
// the default corpus and prints stage losses, count accuracy and val F1.

#include <chrono>
#include <cstdlib>
#include <iostream>

#include "maskcap/pipeline.hpp"

using namespace maskcap;

int main(int argc, char** argv) {
  const int n_videos = argc > 1 ? std::atoi(argv[1]) : 200;
  const int epochs = argc > 2 ? std::atoi(argv[2]) : 10;
  const double lr = argc > 3 ? std::atof(argv[3]) : 1e-4;
  const std::uint64_t seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 0;

  CorpusConfig cc;
  cc.n_videos = n_videos;
  cc.n_val = 50;
  cc.seed = 7;
  const GeneratedCorpus g = generate_corpus(cc);
  const TrainCorpus train = training_view(g.train);

  TrainConfig cfg;
  cfg.epochs_captioning = epochs;
  cfg.epochs_localizing = epochs;
  cfg.lr = lr;
  cfg.seed = seed;

  const auto t0 = std::chrono::steady_clock::now();
  Model model(cfg.model_config(train));
  const StageResult s1 = train_captioning_stage(model, train, cfg);
  const auto t1 = std::chrono::steady_clock::now();
  std::cout << "stage1 losses:";
  for (double l : s1.epoch_mean_loss) std::cout << ' ' << l;
  std::cout << "\nstage1 seconds: "
            << std::chrono::duration<double>(t1 - t0).count() << "\n";

  const StageResult s2 = train_localizing_stage(model, train, cfg);
  const auto t2 = std::chrono::steady_clock::now();
  std::cout << "stage2 losses:";
  for (double l : s2.epoch_mean_loss) std::cout << ' ' << l;
  std::cout << "\nstage2 seconds: "
            << std::chrono::duration<double>(t2 - t1).count() << "\n";
  std::cout << "stage2 first/last step: pos " << s2.steps.front().l_pos << "->"
            << s2.steps.back().l_pos << " neg " << s2.steps.front().l_neg << "->"
            << s2.steps.back().l_neg << " div " << s2.steps.front().l_div << "->"
            << s2.steps.back().l_div << "\n";

  // validation inference
  const TrainCorpus val = training_view(g.val);
  int count_hits = 0;
  const std::vector<InferenceResult> preds = infer_corpus(model, val.videos);
  std::vector<int> pred_counts;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].generated_count == static_cast<int>(g.val.videos[i].captions.size()))
      ++count_hits;
    pred_counts.push_back(preds[i].generated_count);
  }
  const ScoreReport report = evaluate_predictions(preds, g.val);
  const auto t3 = std::chrono::steady_clock::now();
  std::cout << "count accuracy: " << count_hits << "/" << preds.size() << "\n";
  std::cout << "loc F1 " << report.localization.f1 << "  R@Avg " << report.localization.r_avg
            << "  P@Avg " << report.localization.p_avg << "\n";
  std::cout << "bleu2 " << report.averaged_for("bleu2") << "  rouge " << report.averaged_for("rouge_l")
            << "  cider " << report.averaged_for("cider") << "  soda " << report.soda << "\n";

  // diagnostics: count confusion + segment geometry on first videos
  std::map<std::pair<int, int>, int> confusion;
  for (std::size_t i = 0; i < preds.size(); ++i)
    confusion[{static_cast<int>(g.val.videos[i].captions.size()), preds[i].generated_count}]++;
  std::cout << "count confusion (true,pred):";
  for (const auto& [k, c] : confusion) std::cout << " (" << k.first << "," << k.second << ")x" << c;
  std::cout << "\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(preds.size(), 5); ++i) {
    std::cout << "video " << i << " gt:";
    for (const auto& s : g.val.videos[i].ground_truth)
      std::cout << " [" << s.start << "," << s.end << "]";
    std::cout << " pred:";
    for (const auto& e : preds[i].events)
      std::cout << " [" << e.seg.start << "," << e.seg.end << "](mu=" << e.mu << ",sg=" << e.sigma
                << ")";
    std::cout << "\n";
  }
  // caption fidelity on refined events vs any gt caption
  int cap_exact = 0, cap_total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (const auto& e : preds[i].events) {
      ++cap_total;
      for (const auto& c : g.val.videos[i].captions)
        if (c == e.tokens) {
          ++cap_exact;
          break;
        }
    }
  std::cout << "caption exact-match " << cap_exact << "/" << cap_total << "\n";

  const auto base = random_proposals(pred_counts, 123);
  std::vector<std::vector<Segment>> gt_segs;
  for (const auto& v : g.val.videos) {
    std::vector<Segment> s;
    for (const auto& seg : v.ground_truth) s.push_back(seg);
    gt_segs.push_back(s);
  }
  std::cout << "random-baseline F1 " << localization_prf(base, gt_segs).f1 << "\n";
  std::cout << "eval seconds: " << std::chrono::duration<double>(t3 - t2).count() << "\n";
  return 0;
}
