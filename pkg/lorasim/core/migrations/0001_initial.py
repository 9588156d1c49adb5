# Generated by Django 5.2.5 on 2026-10-17 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SimulationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('scenario', models.CharField(max_length=150)),
                ('config_digest', models.CharField(db_index=True, max_length=64)),
                ('seed', models.PositiveBigIntegerField()),
                ('pdr', models.FloatField()),
                ('packets_sent', models.PositiveIntegerField(default=0)),
                ('packets_delivered', models.PositiveIntegerField(default=0)),
                ('tx_attempts', models.PositiveIntegerField(default=0)),
                ('brownouts', models.PositiveIntegerField(default=0)),
                ('boot_loops_detected', models.PositiveIntegerField(default=0)),
                ('energy_harvested', models.FloatField(default=0.0)),
                ('energy_consumed', models.FloatField(default=0.0)),
                ('energy_shunted', models.FloatField(default=0.0)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'verbose_name': 'Simulation run',
                'verbose_name_plural': 'Simulation runs',
                'ordering': ['-created_at'],
            },
        ),
    ]
