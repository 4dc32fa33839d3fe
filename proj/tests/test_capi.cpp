#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "otkd/otkd.h"

namespace {

struct Owned {
  otkd_predictions* p = nullptr;
  ~Owned() { otkd_predictions_free(p); }
};

void make_singleton(double x, double y, double score, Owned& out) {
  const int cells_xy[2] = {0, 0};
  const double scores[1] = {score};
  const double votes[2] = {x, y};
  REQUIRE(otkd_keypoints_create(1, 1, 1, 1, cells_xy, scores, votes, &out.p) == OTKD_OK);
}

}  // namespace

TEST_CASE("version and error strings exist") {
  CHECK(std::strlen(otkd_version()) > 0);
  CHECK(otkd_last_error() != nullptr);
}

TEST_CASE("array construction, kind query and json round trip") {
  Owned a;
  make_singleton(0.25, 0.5, 0.9, a);
  otkd_prediction_kind kind;
  REQUIRE(otkd_predictions_kind(a.p, &kind) == OTKD_OK);
  CHECK(kind == OTKD_PRED_KEYPOINTS);
  int cells = 0;
  REQUIRE(otkd_predictions_cell_count(a.p, &cells) == OTKD_OK);
  CHECK(cells == 1);

  char* text = nullptr;
  REQUIRE(otkd_predictions_to_json(a.p, &text) == OTKD_OK);
  otkd_predictions* back = nullptr;
  REQUIRE(otkd_predictions_from_json(text, &back) == OTKD_OK);
  char* text2 = nullptr;
  REQUIRE(otkd_predictions_to_json(back, &text2) == OTKD_OK);
  CHECK(std::string(text) == text2);
  otkd_string_free(text);
  otkd_string_free(text2);
  otkd_predictions_free(back);
}

TEST_CASE("invalid construction reports a message and a status") {
  const int cells_xy[2] = {0, 0};
  const double scores[1] = {1.5};  // out of range
  const double votes[2] = {0.1, 0.1};
  otkd_predictions* p = nullptr;
  CHECK(otkd_keypoints_create(1, 1, 1, 1, cells_xy, scores, votes, &p) ==
        OTKD_ERR_INVALID_INPUT);
  CHECK(std::strlen(otkd_last_error()) > 0);
}

TEST_CASE("singleton loss in the stiff regime equals the distance") {
  Owned a, b;
  make_singleton(0.2, 0.2, 1.0, a);
  make_singleton(0.5, 0.6, 1.0, b);
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  opt.rho = 1e6;
  opt.max_iter = 20000;
  double total = 0.0;
  int converged = 0;
  REQUIRE(otkd_loss_eval(a.p, b.p, &opt, &total, &converged, nullptr) == OTKD_OK);
  CHECK(converged == 1);
  CHECK(total == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("identical inputs cost zero through the C surface") {
  Owned a;
  make_singleton(0.3, 0.4, 0.8, a);
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  double total = 1.0;
  REQUIRE(otkd_loss_eval(a.p, a.p, &opt, &total, nullptr, nullptr) == OTKD_OK);
  CHECK(std::abs(total) <= 1e-8);
}

TEST_CASE("kind mismatch is a dedicated status") {
  Owned kp;
  make_singleton(0.1, 0.1, 0.9, kp);
  double scores[4] = {0.5, 0.5, 0.5, 0.5};
  double codes[8] = {0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6};
  otkd_predictions* dense = nullptr;
  REQUIRE(otkd_dense_create(2, 2, 2, scores, codes, &dense) == OTKD_OK);
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  double total;
  CHECK(otkd_loss_eval(kp.p, dense, &opt, &total, nullptr, nullptr) == OTKD_ERR_KIND_MISMATCH);
  otkd_predictions_free(dense);
}

TEST_CASE("empty distribution and parse statuses map through") {
  Owned a, zero;
  make_singleton(0.1, 0.1, 0.9, a);
  make_singleton(0.2, 0.2, 0.0, zero);
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  double total;
  CHECK(otkd_loss_eval(zero.p, a.p, &opt, &total, nullptr, nullptr) ==
        OTKD_ERR_EMPTY_DISTRIBUTION);

  otkd_predictions* p = nullptr;
  CHECK(otkd_predictions_from_json("{oops", &p) == OTKD_ERR_PARSE);
}

TEST_CASE("presets fill the published hyperparameters") {
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  double weight = 0.0;
  REQUIRE(otkd_loss_options_preset(&opt, "linemod-kp", &weight) == OTKD_OK);
  CHECK(opt.epsilon == 0.001);
  CHECK(opt.rho == 0.5);
  CHECK(weight == 5.0);
  REQUIRE(otkd_loss_options_preset(&opt, "occ-kp", &weight) == OTKD_OK);
  CHECK(weight == 0.1);
  REQUIRE(otkd_loss_options_preset(&opt, "zebrapose", &weight) == OTKD_OK);
  CHECK(opt.epsilon == 0.0001);
  CHECK(opt.rho == 0.1);
  CHECK(opt.block == 8);
  CHECK(weight == 100.0);
  CHECK(otkd_loss_options_preset(&opt, "unknown", &weight) == OTKD_ERR_INVALID_INPUT);
}

TEST_CASE("gradient buffers match the loss slope") {
  Owned a, b;
  make_singleton(0.0, 0.0, 1.0, a);
  make_singleton(1.0, 0.0, 1.0, b);
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  opt.rho = 1e6;
  opt.max_iter = 20000;
  double d_points[2] = {0, 0};
  double d_weights[1] = {0};
  double total = 0.0;
  int converged = 0;
  REQUIRE(otkd_loss_gradient(a.p, b.p, &opt, d_points, d_weights, &total, &converged) ==
          OTKD_OK);
  CHECK(d_points[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(d_points[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gradient check over random instances passes at the presets") {
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  REQUIRE(otkd_loss_options_preset(&opt, "linemod-kp", nullptr) == OTKD_OK);
  double max_rel = 1.0;
  REQUIRE(otkd_grad_check_random(OTKD_LOSS_OT_KEYPOINT, 2, 7, &opt, 1e-5, 1e-7, &max_rel) ==
          OTKD_OK);
  CHECK(max_rel <= 1e-4);
}

TEST_CASE("balanced oracle through the C surface") {
  Owned a, b;
  make_singleton(0.0, 0.0, 1.0, a);
  make_singleton(0.3, 0.4, 1.0, b);
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  char* out = nullptr;
  REQUIRE(otkd_oracle_eval(a.p, b.p, 0, &opt, 0, 0, &out) == OTKD_OK);
  const std::string text(out);
  otkd_string_free(out);
  CHECK(text.find("\"value\": 0.5") != std::string::npos);
}

TEST_CASE("oracle size caps surface as unsupported-size") {
  const int n = 40;
  std::vector<int> cells_xy;
  std::vector<double> scores, votes;
  for (int i = 0; i < n; ++i) {
    cells_xy.push_back(i);
    cells_xy.push_back(0);
    scores.push_back(0.5);
    votes.push_back(0.01 * i);
    votes.push_back(0.5);
  }
  otkd_predictions* big = nullptr;
  REQUIRE(otkd_keypoints_create(1, 1, 1, n, cells_xy.data(), scores.data(), votes.data(),
                                &big) == OTKD_OK);
  otkd_loss_options opt;
  otkd_loss_options_init(&opt, OTKD_LOSS_OT_KEYPOINT);
  char* out = nullptr;
  CHECK(otkd_oracle_eval(big, big, 0, &opt, 0, 0, &out) == OTKD_ERR_UNSUPPORTED_SIZE);
  otkd_predictions_free(big);
}

TEST_CASE("demo writes into an output directory and fails cleanly otherwise") {
  otkd_scenario scenario;
  otkd_scenario_init(&scenario);
  scenario.seed = 3;
  scenario.n_teacher = 6;
  scenario.n_student = 5;
  otkd_train_options train;
  otkd_train_options_init(&train);
  train.steps = 2;
  char* summary = nullptr;
  REQUIRE(otkd_demo_run(&scenario, &train, "/tmp/otkd_capi_demo", &summary) == OTKD_OK);
  CHECK(std::string(summary).find("ot-keypoint") != std::string::npos);
  otkd_string_free(summary);

  CHECK(otkd_demo_run(&scenario, &train, "/proc/definitely/not/writable", nullptr) ==
        OTKD_ERR_IO);
}

TEST_CASE("sweep returns one csv row per grid point") {
  otkd_scenario scenario;
  otkd_scenario_init(&scenario);
  scenario.seed = 4;
  scenario.n_teacher = 6;
  scenario.n_student = 5;
  otkd_train_options train;
  otkd_train_options_init(&train);
  train.steps = 2;
  const int kinds[1] = {OTKD_LOSS_OT_KEYPOINT};
  const double eps[1] = {1e-3};
  const double rho[2] = {0.1, 0.5};
  const double steps[1] = {0.2};
  char* csv = nullptr;
  REQUIRE(otkd_sweep_run(&scenario, &train, kinds, 1, eps, 1, rho, 2, steps, 1, &csv) ==
          OTKD_OK);
  const std::string text(csv);
  otkd_string_free(csv);
  int lines = 0;
  for (char c : text) lines += (c == '\n');
  CHECK(lines == 3);  // header + 2 rows
}
