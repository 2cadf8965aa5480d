// Builds a few operators, checks the FFT path against direct evaluation,
// then trains the mini network on synthetic blobs.

#include <iostream>
#include <random>

#include "leanconv/leanconv.hpp"

int main() {
  using namespace leanconv;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  StencilBank<double> bank(3, 8);
  for (auto& v : bank.weights()) v = u(rng);
  Tensor x(Shape4{2, 8, 16, 16});
  for (auto& v : x.data()) v = u(rng);

  const auto fft = apply_depthwise(bank, x, ConvPath::fft);
  const auto direct = apply_depthwise(bank, x, ConvPath::direct);
  std::cout << "depthwise fft vs direct relative error " << relative_error(fft, direct) << '\n';

  RdImplicitStep step(8, 3, 10.0);
  step.bank() = bank;
  Context ctx{Mode::train, nullptr};
  std::cout << "implicit step norm ratio " << norm2(step.forward(x, ctx)) / norm2(x) << '\n';

  for (auto kind : kAllStepKinds)
    std::cout << "network A " << to_string(kind) << ": "
              << Network(preset_spec("A", kind), 0).parameter_count() << " parameters\n";

  const auto blobs = make_synthetic(2, 200, Shape4{0, 3, 8, 8}, 1);
  Network net(preset_spec("mini", StepKind::rd_explicit), 1);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 20;
  cfg.seed = 1;
  const auto log = train(net, blobs, nullptr, cfg);
  std::cout << "mini rd_explicit after " << log.size() << " epochs: train loss "
            << log.back().train_loss << ", train accuracy " << log.back().train_acc << '\n';
}
