from django.db import models


class SimulationRun(models.Model):
    scenario = models.CharField(max_length=150)
    config_digest = models.CharField(max_length=64, db_index=True)
    seed = models.PositiveBigIntegerField()
    pdr = models.FloatField()
    packets_sent = models.PositiveIntegerField(default=0)
    packets_delivered = models.PositiveIntegerField(default=0)
    tx_attempts = models.PositiveIntegerField(default=0)
    brownouts = models.PositiveIntegerField(default=0)
    boot_loops_detected = models.PositiveIntegerField(default=0)
    energy_harvested = models.FloatField(default=0.0)
    energy_consumed = models.FloatField(default=0.0)
    energy_shunted = models.FloatField(default=0.0)
    created_at = models.DateTimeField(auto_now_add=True)

    @classmethod
    def from_result(cls, result):
        return cls(
            scenario=result.scenario,
            config_digest=result.config_digest,
            seed=result.seed,
            pdr=result.pdr,
            packets_sent=result.packets_sent,
            packets_delivered=result.packets_delivered,
            tx_attempts=result.tx_attempts,
            brownouts=result.brownouts,
            boot_loops_detected=result.boot_loops_detected,
            energy_harvested=result.energy_harvested,
            energy_consumed=result.energy_consumed,
            energy_shunted=result.energy_shunted,
        )

    def __str__(self):
        return f'{self.scenario} seed={self.seed} pdr={self.pdr:.3f}'

    class Meta:
        ordering = ['-created_at']
        verbose_name = "Simulation run"
        verbose_name_plural = "Simulation runs"
