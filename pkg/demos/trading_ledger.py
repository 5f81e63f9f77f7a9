"""Show the all-in/all-out ledger on a hand-sized example."""

from adaptive_tft.evaluation import Direction, buy_and_hold, perfect_foresight_signals, \
    simulate_trading

U, D, N = Direction.UP, Direction.DOWN, Direction.NO_SIGNAL
prices = [100, 110, 99, 120, 118, 125]
signals = [U, D, U, N, D]

ledger = simulate_trading(signals, prices)
for e in ledger.events:
    print(f"t={e.index}  price {e.price:7.2f}  {e.action.name:4s}  cash {e.cash:8.2f}  "
          f"units {e.position:.4f}  value {e.value:8.2f}")
print(f"final {ledger.final_value:.2f}, buy and hold {buy_and_hold(prices):.2f}, "
      f"perfect foresight "
      f"{simulate_trading(perfect_foresight_signals(prices), prices).final_value:.2f}")
