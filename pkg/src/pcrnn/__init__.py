"""PC-RNN forward-citation forecasting."""
